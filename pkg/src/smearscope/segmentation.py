"""Cell localization: tiled Otsu, morphological clean-up, marker watershed."""
from __future__ import annotations

import heapq
from dataclasses import asdict, dataclass, field

import numpy as np

from .boxes import BoundingBox
from .imaging import (LabelMap, StructuringElement, as_rgb, connected_components,
                      distance_transform, equalize_histogram, erode, open_mask,
                      tiled_otsu, to_grayscale)


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationConfig:
    grid: tuple[int, int] = (4, 4)
    open_se: StructuringElement = field(default_factory=lambda: StructuringElement("disk", 2))
    erode_se: StructuringElement = field(default_factory=lambda: StructuringElement("disk", 1))
    erode_iters: int = 2
    marker_fraction: float = 0.5
    min_area_fraction: float = 0.15

    def __post_init__(self):
        if min(self.grid) < 1 or self.erode_iters < 1:
            raise ValueError("grid and erode_iters must be >= 1")
        if not 0 < self.marker_fraction < 1:
            raise ValueError("marker_fraction must be in (0, 1)")
        if not 0 <= self.min_area_fraction < 1:
            raise ValueError("min_area_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentationConfig":
        d = dict(d)
        if "grid" in d:
            d["grid"] = tuple(d["grid"])
        for key in ("open_se", "erode_se"):
            if isinstance(d.get(key), dict):
                d[key] = StructuringElement(**d[key])
        return cls(**d)


@dataclass(frozen=True)
class CellDetection:
    box: BoundingBox
    label_id: int
    area: int

    def to_dict(self) -> dict:
        return {**self.box.to_dict(), "area": self.area}


_NEIGHBORS4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


def make_markers(mask: np.ndarray, dist: np.ndarray, marker_fraction: float = 0.5) -> LabelMap:
    """Seed regions: per component, pixels at >= fraction of its peak distance."""
    comps = connected_components(mask, 8)
    if comps.num_labels == 0:
        return LabelMap(np.zeros(mask.shape, dtype=np.int32), 0)
    peak = np.zeros(comps.num_labels + 1)
    np.maximum.at(peak, comps.labels.ravel(), dist.ravel())
    peak[0] = np.inf
    sure = dist >= marker_fraction * peak[comps.labels]
    sure &= comps.labels > 0
    return connected_components(sure, 8)


def watershed(mask: np.ndarray, markers: LabelMap, dist: np.ndarray) -> LabelMap:
    """Priority flood of the foreground from the markers.

    Pixels are claimed highest distance first; equal distances are served
    in the order they were queued. Flooding never leaves ``mask``.
    """
    mask = np.asarray(mask, dtype=bool)
    if markers.num_labels == 0:
        raise SegmentationError("no seeds")
    h, w = mask.shape
    out = np.where(mask, markers.labels, 0).astype(np.int32)
    labels = out.ravel().tolist()
    fg = mask.ravel().tolist()
    neg = (-np.asarray(dist, dtype=np.float64)).ravel().tolist()

    heap = []
    counter = 0
    for idx in np.flatnonzero(out.ravel()).tolist():
        heap.append((neg[idx], counter, idx))
        counter += 1
    heapq.heapify(heap)
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        _, _, idx = pop(heap)
        lab = labels[idx]
        y, x = divmod(idx, w)
        for dy, dx in _NEIGHBORS4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w:
                j = ny * w + nx
                if fg[j] and labels[j] == 0:
                    labels[j] = lab
                    push(heap, (neg[j], counter, j))
                    counter += 1
    return LabelMap(np.asarray(labels, dtype=np.int32).reshape(h, w), markers.num_labels)


def foreground_mask(img: np.ndarray, cfg: SegmentationConfig) -> np.ndarray:
    """Binarization and morphology stages: the mask the watershed floods."""
    gray = equalize_histogram(to_grayscale(img))
    # stained cells are darker than the plasma background
    mask = tiled_otsu(gray, cfg.grid[0], cfg.grid[1], polarity="below")
    mask = open_mask(mask, cfg.open_se)
    return erode(mask, cfg.erode_se, iterations=cfg.erode_iters)


def detections_from_labels(lm: LabelMap, min_area_fraction: float) -> list[CellDetection]:
    if lm.num_labels == 0:
        return []
    labels = lm.labels
    areas = lm.areas()
    present = np.flatnonzero(areas[1:]) + 1
    if present.size == 0:
        return []
    cutoff = min_area_fraction * float(np.median(areas[present]))
    h, w = labels.shape
    ys, xs = np.indices((h, w))
    flat = labels.ravel()
    n = lm.num_labels + 1
    xmin = np.full(n, w); ymin = np.full(n, h)
    xmax = np.full(n, -1); ymax = np.full(n, -1)
    np.minimum.at(xmin, flat, xs.ravel()); np.minimum.at(ymin, flat, ys.ravel())
    np.maximum.at(xmax, flat, xs.ravel()); np.maximum.at(ymax, flat, ys.ravel())
    out = []
    for k in present.tolist():
        if areas[k] < cutoff:
            continue
        box = BoundingBox(int(xmin[k]), int(ymin[k]),
                          int(xmax[k] - xmin[k] + 1), int(ymax[k] - ymin[k] + 1))
        out.append(CellDetection(box, k, int(areas[k])))
    out.sort(key=lambda d: (d.box.y, d.box.x, d.label_id))
    return out


def segment_labels(img: np.ndarray, cfg: SegmentationConfig = SegmentationConfig()) -> LabelMap:
    img = as_rgb(img)
    mask = foreground_mask(img, cfg)
    if not mask.any():
        return LabelMap(np.zeros(mask.shape, dtype=np.int32), 0)
    dist = distance_transform(mask)
    markers = make_markers(mask, dist, cfg.marker_fraction)
    return watershed(mask, markers, dist)


def localize_cells(img: np.ndarray, cfg: SegmentationConfig = SegmentationConfig()
                   ) -> list[CellDetection]:
    """Bounding boxes of every cell found in a (preprocessed) smear image."""
    return detections_from_labels(segment_labels(img, cfg), cfg.min_area_fraction)
