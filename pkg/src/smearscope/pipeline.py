"""Whole-image analysis: preprocess, localize, classify, and draw the result."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boxes import BoundingBox
from .classification import classify_features, crop_features, model_hash
from .imaging import as_rgb
from .preprocess import PreprocessConfig, preprocess_field
from .segmentation import SegmentationConfig, localize_cells
from .stages import StageLabel

OVERLAY_COLORS = {
    StageLabel.HEALTHY: (0, 200, 0),
    StageLabel.RING: (255, 160, 0),
    StageLabel.TROPHOZOITE: (230, 30, 30),
    StageLabel.SCHIZONT: (255, 0, 200),
    StageLabel.GAMETOCYTE: (255, 230, 0),
}
BORDER = 2


@dataclass
class CellResult:
    box: BoundingBox
    label: StageLabel
    stage1_probs: list[float]
    stage2_probs: Optional[list[float]] = None

    def to_dict(self) -> dict:
        return {"box": self.box.to_dict(), "label": self.label.label_name,
                "stage1_probs": self.stage1_probs, "stage2_probs": self.stage2_probs}


@dataclass
class AnalysisResult:
    image_id: str
    cells: list[CellResult]
    pipeline_config_hash: str
    crop_rect: BoundingBox
    timings: dict = field(default_factory=dict)

    @property
    def total_cells(self) -> int:
        return len(self.cells)

    @property
    def infected_cells(self) -> int:
        return sum(1 for c in self.cells if c.label is not StageLabel.HEALTHY)

    def to_dict(self, with_timings: bool = True) -> dict:
        d = {"image_id": self.image_id, "total_cells": self.total_cells,
             "infected_cells": self.infected_cells,
             "cells": [c.to_dict() for c in self.cells],
             "crop_rect": self.crop_rect.to_dict(),
             "pipeline_config_hash": self.pipeline_config_hash}
        if with_timings:
            d["timings"] = self.timings
        return d


def image_id_for_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def pipeline_config_hash(model, seg_cfg: SegmentationConfig, pre_cfg: PreprocessConfig) -> str:
    doc = {"model": model_hash(model), "segmentation": seg_cfg.to_dict(),
           "preprocess": {"dark_cutoff": pre_cfg.dark_cutoff,
                          "ratio_cutoff": pre_cfg.ratio_cutoff,
                          "skip_vignette": pre_cfg.skip_vignette}}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def analyze_image(img: np.ndarray, seg_cfg: SegmentationConfig, model,
                  pre_cfg: PreprocessConfig = PreprocessConfig(),
                  image_id: str = "") -> AnalysisResult:
    """Count and stage every cell in one smear photograph.

    ``model`` is a five-class classifier (single stage) or a
    :class:`~smearscope.classification.CascadeModel`. Boxes are reported in
    the coordinates of the input image.
    """
    img = as_rgb(img)
    timings = {}
    t0 = time.perf_counter()
    field_img, report = preprocess_field(img, pre_cfg)
    t1 = time.perf_counter()
    detections = localize_cells(field_img, seg_cfg)
    t2 = time.perf_counter()
    feats = crop_features(field_img, [d.box for d in detections])
    cells = []
    dx, dy = report.ratio_crop_rect.x, report.ratio_crop_rect.y
    for det, f in zip(detections, feats):
        pred = classify_features(model, f)
        cells.append(CellResult(
            det.box.shifted(dx, dy), pred.label,
            [float(p) for p in pred.stage1_probs],
            None if pred.stage2_probs is None else [float(p) for p in pred.stage2_probs]))
    t3 = time.perf_counter()
    timings = {"preprocess_ms": round(1000 * (t1 - t0), 3),
               "localize_ms": round(1000 * (t2 - t1), 3),
               "classify_ms": round(1000 * (t3 - t2), 3)}
    return AnalysisResult(image_id, cells, pipeline_config_hash(model, seg_cfg, pre_cfg),
                          report.ratio_crop_rect, timings)


def draw_boxes(img: np.ndarray, boxes, colors, border: int = BORDER) -> np.ndarray:
    """Copy of ``img`` with a ``border``-pixel frame drawn inside each box."""
    out = as_rgb(img).copy()
    h, w = out.shape[:2]
    for box, color in zip(boxes, colors):
        x0, y0 = max(box.x, 0), max(box.y, 0)
        x1, y1 = min(box.x1, w), min(box.y1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        b = min(border, x1 - x0, y1 - y0)
        out[y0:y0 + b, x0:x1] = color
        out[y1 - b:y1, x0:x1] = color
        out[y0:y1, x0:x0 + b] = color
        out[y0:y1, x1 - b:x1] = color
    return out


def render_overlay(img: np.ndarray, result: AnalysisResult) -> np.ndarray:
    return draw_boxes(img, [c.box for c in result.cells],
                      [OVERLAY_COLORS[c.label] for c in result.cells])
