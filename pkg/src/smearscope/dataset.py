"""Annotation manifests and the seeded synthetic smear generator.

Randomness comes from numpy's PCG64 bit generator, which produces the same
stream on every platform for a given seed. Image ``i`` of a corpus is drawn
from ``seed + i``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .boxes import BoundingBox
from .imaging import read_image, write_png
from .stages import STAGE_NAMES, StageLabel

MANIFEST_FORMAT = "smearscope-manifest-v1"
MAX_PLACEMENT_ATTEMPTS = 10_000


class ManifestError(ValueError):
    """Base class for manifest problems; ``location`` names where it happened."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class MalformedManifestError(ManifestError):
    pass


class BoxOutOfBoundsError(ManifestError):
    pass


class UnknownLabelError(ManifestError):
    pass


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class CellAnnotation:
    box: BoundingBox
    label: StageLabel

    def to_dict(self) -> dict:
        return {**self.box.to_dict(), "label": self.label.label_name}


@dataclass
class ImageRecord:
    image_id: str
    path: str
    width: int
    height: int
    cells: list[CellAnnotation] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "path": self.path, "width": self.width,
                "height": self.height, "cells": [c.to_dict() for c in self.cells]}


@dataclass
class Manifest:
    images: list[ImageRecord]
    metadata: dict = field(default_factory=dict)
    root: Path = Path(".")

    def to_dict(self) -> dict:
        return {"format": MANIFEST_FORMAT, "metadata": self.metadata,
                "images": [im.to_dict() for im in self.images]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def image_path(self, record: ImageRecord) -> Path:
        return self.root / record.path

    def load_image(self, record: ImageRecord) -> np.ndarray:
        return read_image(self.image_path(record))

    def by_id(self) -> dict[str, ImageRecord]:
        return {im.image_id: im for im in self.images}

    @property
    def num_cells(self) -> int:
        return sum(len(im.cells) for im in self.images)


def parse_manifest(doc, root: Path = Path(".")) -> Manifest:
    """Validate a decoded manifest document."""
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise MalformedManifestError(f"expected format {MANIFEST_FORMAT!r}")
    if not isinstance(doc.get("images"), list):
        raise MalformedManifestError("'images' must be a list")
    images, seen = [], set()
    for i, raw in enumerate(doc["images"]):
        where = f"images[{i}]"
        try:
            image_id = str(raw["image_id"])
            where = f"image {image_id!r}"
            rec = ImageRecord(image_id, str(raw["path"]), int(raw["width"]), int(raw["height"]))
            raw_cells = raw.get("cells", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifestError(f"bad image entry ({exc})", where) from None
        if image_id in seen:
            raise MalformedManifestError("duplicate image_id", where)
        seen.add(image_id)
        for j, c in enumerate(raw_cells):
            cwhere = f"{where} cell {j}"
            try:
                box = BoundingBox(int(c["x"]), int(c["y"]), int(c["w"]), int(c["h"]))
                label_text = c["label"]
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedManifestError(f"bad cell entry ({exc})", cwhere) from None
            if not box.within(rec.width, rec.height):
                raise BoxOutOfBoundsError(
                    f"box {box.to_dict()} exceeds {rec.width}x{rec.height}", cwhere)
            try:
                label = StageLabel.parse(str(label_text))
            except ValueError:
                raise UnknownLabelError(f"unknown label {label_text!r}", cwhere) from None
            rec.cells.append(CellAnnotation(box, label))
        images.append(rec)
    return Manifest(images, dict(doc.get("metadata", {})), Path(root))


def load_manifest(path, adapter: Optional[Callable[[object], dict]] = None) -> Manifest:
    """Read and validate a manifest file.

    ``adapter`` converts a foreign annotation document into the v1 layout
    before validation, which is how external dataset formats plug in.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"invalid JSON: {exc}", str(path)) from None
    if adapter is not None:
        doc = adapter(doc)
    return parse_manifest(doc, path.parent)


# -- synthetic smears ------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    width: int = 1024
    height: int = 768
    cells_per_image: tuple[int, int] = (101, 121)  # inclusive, uniform
    radius_range: tuple[int, int] = (12, 22)
    class_mix: tuple[float, ...] = (0.9, 0.025, 0.025, 0.025, 0.025)
    overlap: float = 0.05  # max pairwise box IoU
    aspect_jitter: float = 0.15
    background_color: tuple[int, int, int] = (245, 230, 235)
    cell_color: tuple[int, int, int] = (230, 180, 190)
    parasite_color: tuple[int, int, int] = (90, 60, 130)
    color_jitter: int = 8
    # chromatin colour = cell + strength * (parasite - cell)
    stain_strength: tuple[float, float] = (0.5, 1.0)
    # chance that a cell carries 1-3 specks of stain precipitate
    debris_prob: float = 0.3
    noise_std: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if len(self.class_mix) != len(StageLabel) or abs(sum(self.class_mix) - 1) > 1e-9:
            raise ValueError("class_mix must have 5 fractions summing to 1")
        if min(self.class_mix) < 0:
            raise ValueError("class_mix fractions must be non-negative")
        lo, hi = self.radius_range
        if lo < 1 or hi < lo:
            raise ValueError("radius_range must be positive and ordered")
        if not 0 <= self.stain_strength[0] <= self.stain_strength[1] <= 1:
            raise ValueError("stain_strength must be an ordered range within [0, 1]")
        if not 0 <= self.debris_prob <= 1:
            raise ValueError("debris_prob must be in [0, 1]")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must be in [0, 1)")
        if self.cells_per_image[0] < 0 or self.cells_per_image[1] < self.cells_per_image[0]:
            raise ValueError("cells_per_image must be an ordered non-negative range")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x, b.x)
    ih = min(a.y1, b.y1) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0):
    c, s = math.cos(angle), math.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _parasite_mask(rng: np.random.Generator, label: StageLabel, yy, xx, rx: int, ry: int):
    """Chromatin footprint for one cell, in cell-centred coordinates."""
    r = min(rx, ry)
    if label is StageLabel.RING:
        rr = rng.uniform(0.3, 0.4) * r
        cy, cx = rng.uniform(-0.3, 0.3, 2) * r
        d = np.hypot(yy - cy, xx - cx)
        ring = np.abs(d - rr) <= 0.6
        # the chromatin dot on the ring
        a = rng.uniform(0, 2 * math.pi)
        dot = np.hypot(yy - cy - rr * math.sin(a), xx - cx - rr * math.cos(a)) <= 1.5
        return ring | dot
    if label is StageLabel.TROPHOZOITE:
        out = np.zeros(yy.shape, dtype=bool)
        for _ in range(int(rng.integers(3, 6))):
            cy, cx = rng.uniform(-0.25, 0.25, 2) * r
            out |= np.hypot(yy - cy, xx - cx) <= rng.uniform(0.28, 0.38) * r
        return out
    if label is StageLabel.SCHIZONT:
        out = np.zeros(yy.shape, dtype=bool)
        for _ in range(int(rng.integers(6, 13))):
            a = rng.uniform(0, 2 * math.pi)
            d = rng.uniform(0, 0.45) * r
            out |= np.hypot(yy - d * math.sin(a), xx - d * math.cos(a)) <= rng.uniform(1.8, 2.4)
        return out
    if label is StageLabel.GAMETOCYTE:
        return _ellipse(yy, xx, 0.0, 0.0, 0.35 * ry, 0.8 * rx, rng.uniform(0, math.pi))
    return np.zeros(yy.shape, dtype=bool)


def generate_smear(cfg: SynthConfig) -> tuple[np.ndarray, list[CellAnnotation]]:
    """Render one synthetic smear and its ground-truth annotations."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    h, w = cfg.height, cfg.width
    lo, hi = cfg.cells_per_image
    n_cells = int(rng.integers(lo, hi + 1))
    mix = np.asarray(cfg.class_mix, dtype=np.float64)

    # placement uses integer geometry only
    placed: list[tuple[int, int, int, int, StageLabel]] = []
    boxes: list[BoundingBox] = []
    for _ in range(n_cells):
        label = StageLabel(int(rng.choice(len(StageLabel), p=mix)))
        rx = int(rng.integers(cfg.radius_range[0], cfg.radius_range[1] + 1))
        jitter = int(round(rx * cfg.aspect_jitter))
        ry = max(1, rx + int(rng.integers(-jitter, jitter + 1)))
        if 2 * rx + 1 > w or 2 * ry + 1 > h:
            raise PlacementError("cannot place: cell larger than image")
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            cx = int(rng.integers(rx, w - rx))
            cy = int(rng.integers(ry, h - ry))
            box = BoundingBox(cx - rx, cy - ry, 2 * rx + 1, 2 * ry + 1)
            if all(_box_iou(box, b) <= cfg.overlap for b in boxes):
                break
        else:
            raise PlacementError("cannot place")
        boxes.append(box)
        placed.append((cx, cy, rx, ry, label))

    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = cfg.background_color
    j = cfg.color_jitter
    for cx, cy, rx, ry, label in placed:
        ys = slice(cy - ry, cy + ry + 1)
        xs = slice(cx - rx, cx + rx + 1)
        yy, xx = np.mgrid[-ry:ry + 1, -rx:rx + 1].astype(np.float64)
        body = _ellipse(yy, xx, 0.0, 0.0, ry, rx)
        cell_rgb = np.asarray(cfg.cell_color) + rng.integers(-j, j + 1, 3)
        dark_rgb = np.asarray(cfg.parasite_color) + rng.integers(-j, j + 1, 3)
        patch = img[ys, xs]
        patch[body] = cell_rgb
        chrom = _parasite_mask(rng, label, yy, xx, rx, ry) & body
        if chrom.any():
            strength = rng.uniform(*cfg.stain_strength)
            patch[chrom] = cell_rgb + strength * (dark_rgb - cell_rgb)
        if rng.uniform() < cfg.debris_prob:
            for _ in range(int(rng.integers(1, 4))):
                dy, dx = rng.uniform(-0.7, 0.7, 2) * (ry, rx)
                speck = (np.hypot(yy - dy, xx - dx) <= rng.uniform(1.0, 2.0)) & body
                patch[speck] = cell_rgb + rng.uniform(0.4, 0.8) * (dark_rgb - cell_rgb)
    if cfg.noise_std > 0:
        img += rng.normal(0.0, cfg.noise_std, img.shape)
    img = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    anns = [CellAnnotation(b, p[4]) for b, p in zip(boxes, placed)]
    return img, anns


def generate_corpus(cfg: SynthConfig, n_images: int, out_dir) -> Manifest:
    """Write ``n_images`` PNG smears plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_images):
        img, anns = generate_smear(SynthConfig.from_dict({**cfg.to_dict(), "seed": cfg.seed + i}))
        name = f"smear_{i:04d}.png"
        write_png(out / name, img)
        records.append(ImageRecord(f"smear_{i:04d}", name, cfg.width, cfg.height, anns))
    meta = {"source": "synthetic", "stain": "giemsa-like", "magnification": "100x",
            "generator": cfg.to_dict(), "classes": STAGE_NAMES}
    manifest = Manifest(records, meta, out)
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest
