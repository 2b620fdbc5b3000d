"""Detection matching, classification metrics and the evaluation drivers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .boxes import BoundingBox
from .classification import (NUM_FEATURES, ClassificationError, TrainConfig,
                             classify_features, crop_features, train_ssc, train_tsc)
from .segmentation import SegmentationConfig, localize_cells
from .stages import STAGE_NAMES, StageLabel

IOU_THRESHOLD = 0.5


class EvaluationError(ValueError):
    pass


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x, b.x)
    ih = min(a.y1, b.y1) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass
class DetectionMatchResult:
    tp: int
    fp: int
    fn: int
    matches: list[tuple[int, int, float]] = field(default_factory=list)  # (gt, pred, iou)


def match_detections(gt: Sequence[BoundingBox], pred: Sequence[BoundingBox],
                     thresh: float = IOU_THRESHOLD) -> DetectionMatchResult:
    """Greedy one-to-one matching in descending IoU order.

    Pairs need IoU strictly above ``thresh``. Ties go to the lower gt index,
    then the lower prediction index.
    """
    if not 0 < thresh < 1:
        raise EvaluationError("thresh must be in (0, 1)")
    pairs = []
    # sweep over x-sorted predictions keeps this near-linear on dense smears
    order = sorted(range(len(pred)), key=lambda j: pred[j].x)
    xs = [pred[j].x for j in order]
    for i, g in enumerate(gt):
        lo = np.searchsorted(xs, g.x - _max_width(pred), side="left")
        for k in range(lo, len(order)):
            j = order[k]
            p = pred[j]
            if p.x >= g.x1:
                break
            v = iou(g, p)
            if v > thresh:
                pairs.append((-v, i, j))
    pairs.sort()
    used_g, used_p, matches = set(), set(), []
    for neg, i, j in pairs:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        matches.append((i, j, -neg))
    tp = len(matches)
    return DetectionMatchResult(tp, len(pred) - tp, len(gt) - tp, matches)


def _max_width(boxes: Sequence[BoundingBox]) -> int:
    return max((b.w for b in boxes), default=0)


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, f1_from_pr(p, r)


def f1_from_pr(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = ground truth, cols = predicted
    class_names: list[str]

    @property
    def k(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}


def confusion_matrix(gt_labels: Sequence[int], pred_labels: Sequence[int], k: int,
                     class_names: Optional[list[str]] = None) -> ConfusionMatrix:
    if len(gt_labels) != len(pred_labels):
        raise EvaluationError(
            f"length mismatch: {len(gt_labels)} ground-truth vs {len(pred_labels)} predicted")
    counts = np.zeros((k, k), dtype=np.int64)
    g = np.asarray(gt_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if g.size and (g.min() < 0 or p.min() < 0 or g.max() >= k or p.max() >= k):
        raise EvaluationError(f"labels must lie in [0, {k})")
    np.add.at(counts, (g, p), 1)
    if class_names is None:
        class_names = STAGE_NAMES[:k] if k == len(STAGE_NAMES) else [str(i) for i in range(k)]
    return ConfusionMatrix(counts, list(class_names))


def per_class_recall(cm: ConfusionMatrix) -> list[Optional[float]]:
    rows = cm.counts.sum(axis=1)
    return [float(cm.counts[i, i] / rows[i]) if rows[i] else None for i in range(cm.k)]


def macro_average_accuracy(cm: ConfusionMatrix) -> float:
    """Mean of class-wise accuracies (diagonal / row sum).

    Classes without ground-truth samples are left out of the mean.
    """
    accs = [a for a in per_class_recall(cm) if a is not None]
    if not accs:
        raise EvaluationError("confusion matrix has no ground-truth samples")
    return float(sum(accs) / len(accs))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.counts.sum()
    return float(np.trace(cm.counts) / total) if total else 0.0


def per_class_f1(cm: ConfusionMatrix) -> list[float]:
    diag = np.diag(cm.counts).astype(np.float64)
    cols = cm.counts.sum(axis=0)
    rows = cm.counts.sum(axis=1)
    out = []
    for i in range(cm.k):
        p = diag[i] / cols[i] if cols[i] else 0.0
        r = diag[i] / rows[i] if rows[i] else 0.0
        out.append(f1_from_pr(p, r))
    return out


def macro_f1(cm: ConfusionMatrix) -> float:
    return float(np.mean(per_class_f1(cm)))


# -- splitting -------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    train: list[str]
    test: list[str]
    val: list[str]
    fractions: tuple[float, float, float]
    seed: int

    def to_dict(self) -> dict:
        return {"train": self.train, "test": self.test, "val": self.val,
                "fractions": list(self.fractions), "seed": self.seed}


def split_dataset(image_ids: Sequence[str], fractions=(0.7, 0.2, 0.1),
                  seed: int = 0) -> SplitAssignment:
    """Seeded per-image split; floors for each part, remainder to train."""
    ids = sorted(image_ids)
    n = len(ids)
    if n < 3:
        raise EvaluationError("need at least 3 images to split")
    if len(set(ids)) != n:
        raise EvaluationError("image ids must be unique")
    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9 or min(fractions) < 0:
        raise EvaluationError("fractions must be three non-negative values summing to 1")
    n_train, n_test, n_val = (math.floor(f * n + 1e-9) for f in fractions)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    shuffled = [ids[i] for i in perm]
    train = shuffled[:n_train]
    test = shuffled[n_train:n_train + n_test]
    val = shuffled[n_train + n_test:n_train + n_test + n_val]
    train += shuffled[n_train + n_test + n_val:]
    return SplitAssignment(train, test, val, tuple(fractions), seed)


# -- drivers ---------------------------------------------------------------

def _r4(x: float) -> float:
    return round(float(x), 4)


def evaluate_localization(manifest, seg_cfg=None, detector: Optional[Callable] = None,
                          thresh: float = IOU_THRESHOLD) -> dict:
    """Localize every manifest image and score against its annotations.

    Counts are summed over images before P/R/F1 are computed. ``detector``
    maps ``(image_record, rgb_image)`` to boxes and defaults to
    :func:`~smearscope.segmentation.localize_cells`.
    """
    if not manifest.images:
        raise EvaluationError("no images")
    seg_cfg = seg_cfg or SegmentationConfig()
    if detector is None:
        def detector(record, img):
            return [d.box for d in localize_cells(img, seg_cfg)]

    per_image, tp, fp, fn = [], 0, 0, 0
    for rec in manifest.images:
        pred = detector(rec, manifest.load_image(rec))
        res = match_detections([c.box for c in rec.cells], pred, thresh)
        tp, fp, fn = tp + res.tp, fp + res.fp, fn + res.fn
        p, r, f = precision_recall_f1(res.tp, res.fp, res.fn)
        per_image.append({"image_id": rec.image_id, "tp": res.tp, "fp": res.fp, "fn": res.fn,
                          "precision": _r4(p), "recall": _r4(r), "f1": _r4(f)})
    p, r, f = precision_recall_f1(tp, fp, fn)
    return {"task": "localization", "iou_threshold": thresh,
            "config": seg_cfg.to_dict(),
            "overall": {"tp": tp, "fp": fp, "fn": fn, "precision": _r4(p),
                        "recall": _r4(r), "f1": _r4(f)},
            "per_image": per_image}


def cell_dataset(manifest, image_ids: Sequence[str], box_source: str = "gt",
                 seg_cfg=None) -> tuple[np.ndarray, np.ndarray]:
    """Features and ground-truth labels for the cells of the given images.

    With ``box_source="predicted"`` crops come from localized boxes matched
    to annotations; unmatched detections and missed cells are skipped.
    """
    records = manifest.by_id()
    feats, labels = [], []
    for image_id in image_ids:
        rec = records[image_id]
        if not rec.cells:
            continue
        img = manifest.load_image(rec)
        if box_source == "gt":
            boxes = [c.box for c in rec.cells]
            labs = [int(c.label) for c in rec.cells]
        elif box_source == "predicted":
            pred = [d.box for d in localize_cells(img, seg_cfg or SegmentationConfig())]
            res = match_detections([c.box for c in rec.cells], pred)
            boxes = [pred[j] for _, j, _ in res.matches]
            labs = [int(rec.cells[i].label) for i, _, _ in res.matches]
        else:
            raise EvaluationError(f"unknown box_source {box_source!r}")
        if boxes:
            feats.append(crop_features(img, boxes))
            labels.extend(labs)
    if not feats:
        return np.zeros((0, NUM_FEATURES)), np.zeros(0, dtype=np.int64)
    return np.concatenate(feats), np.asarray(labels, dtype=np.int64)


def classification_report(cm: ConfusionMatrix) -> dict:
    recalls = per_class_recall(cm)
    f1s = per_class_f1(cm)
    cols = cm.counts.sum(axis=0)
    per_class = []
    for i, name in enumerate(cm.class_names):
        prec = cm.counts[i, i] / cols[i] if cols[i] else 0.0
        per_class.append({"class": name, "support": int(cm.counts[i].sum()),
                          "precision": _r4(prec),
                          "accuracy": None if recalls[i] is None else _r4(recalls[i]),
                          "f1": _r4(f1s[i])})
    return {"macro_average_accuracy": _r4(macro_average_accuracy(cm)),
            "macro_f1": _r4(macro_f1(cm)),
            "overall_accuracy": _r4(overall_accuracy(cm)),
            "per_class": per_class,
            "confusion_matrix": cm.to_dict()}


def evaluate_classification(manifest, split: SplitAssignment, model_kind: str = "tsc",
                            seed: int = 0, hp=None, box_source: str = "gt",
                            seg_cfg=None, train_ids: Optional[Sequence[str]] = None,
                            test_ids: Optional[Sequence[str]] = None) -> dict:
    """Train on the split's train images and score on its test images.

    SSC is one five-way model; TSC trains stage 1 on every training cell and
    stage 2 on the balanced subset. Class-wise accuracy is per-class recall;
    F1 is the unweighted macro mean.
    """
    if model_kind not in ("ssc", "tsc"):
        raise EvaluationError(f"unknown model kind {model_kind!r}")
    hp = replace(hp or TrainConfig(), seed=seed)
    train_ids = list(split.train if train_ids is None else train_ids)
    test_ids = list(split.test if test_ids is None else test_ids)
    x_tr, y_tr = cell_dataset(manifest, train_ids, "gt")
    counts = np.bincount(y_tr, minlength=len(StageLabel))
    for s in StageLabel:
        if counts[s] == 0:
            raise EvaluationError(f"class missing from train split: {s.label_name}")
    try:
        model = train_ssc(x_tr, y_tr, hp) if model_kind == "ssc" else train_tsc(x_tr, y_tr, hp)
    except ClassificationError as exc:
        raise EvaluationError(str(exc)) from None
    x_te, y_te = cell_dataset(manifest, test_ids, box_source, seg_cfg)
    pred = [int(classify_features(model, f).label) for f in x_te]
    cm = confusion_matrix(y_te.tolist(), pred, len(StageLabel))
    return {"task": "classification", "arch": model_kind, "seed": seed,
            "metric_definitions": {
                "class_accuracy": "per-class recall (diagonal / row sum)",
                "macro_average_accuracy": "unweighted mean of class accuracies",
                "f1": "unweighted macro mean of per-class F1"},
            "config": {"train": asdict(hp), "box_source": box_source,
                       "split": split.to_dict()},
            "train_cells": int(y_tr.size), "test_cells": int(y_te.size),
            "train_class_counts": {s.label_name: int(counts[s]) for s in StageLabel},
            **classification_report(cm)}
