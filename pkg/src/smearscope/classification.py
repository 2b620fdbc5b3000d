"""Cell crops, handcrafted features, softmax classifiers and the SSC/TSC cascade.

Any object with ``class_names`` and ``predict_proba(features)`` can stand
in for :class:`SoftmaxClassifier`; the cascade only relies on that.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .boxes import BoundingBox
from .imaging import as_rgb, to_grayscale
from .stages import INFECTED_STAGES, STAGE_NAMES, StageLabel

CROP_SIZE = 64
CROP_MARGIN = 0.10
NUM_FEATURES = 30
DARK_LEVEL = 100
MODEL_FORMAT = "smearscope-model-v1"
CASCADE_FORMAT = "smearscope-cascade-v1"
FEATURE_SPEC = "hist8x3+shape3+stain3"
STAGE1_NAMES = ["healthy", "infected"]


class ClassificationError(ValueError):
    pass


# -- crops and features ----------------------------------------------------

@dataclass(frozen=True)
class CellCrop:
    pixels: np.ndarray  # (64, 64, 3) uint8
    source_box: BoundingBox
    source_image_id: str = ""


def expand_box(box: BoundingBox, width: int, height: int, margin: float = CROP_MARGIN):
    """Grow ``box`` by ``margin`` of its size per side, clamped to the image.

    Returns float edge coordinates ``(x0, y0, x1, y1)`` of pixel centres.
    """
    mx, my = margin * box.w, margin * box.h
    x0 = max(0.0, box.x - mx)
    y0 = max(0.0, box.y - my)
    x1 = min(width - 1.0, box.x1 - 1 + mx)
    y1 = min(height - 1.0, box.y1 - 1 + my)
    return x0, y0, x1, y1


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    def at(rows, cols):
        return img[np.ix_(rows, cols)].astype(np.float64)

    top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx
    bot = at(y1, x0) * (1 - fx) + at(y1, x1) * fx
    return top * (1 - fy) + bot * fy


def extract_crop(img: np.ndarray, box: BoundingBox, image_id: str = "",
                 margin: float = CROP_MARGIN, size: int = CROP_SIZE) -> CellCrop:
    """Margin-expanded, bilinearly resampled ``size`` x ``size`` crop.

    Output corners sample the expanded box's corner pixels exactly.
    """
    img = as_rgb(img)
    if box.w < 1 or box.h < 1:
        raise ClassificationError("degenerate box")
    h, w = img.shape[:2]
    if box.x >= w or box.y >= h or box.x1 <= 0 or box.y1 <= 0:
        raise ClassificationError(f"box {box.to_dict()} lies outside the image")
    x0, y0, x1, y1 = expand_box(box, w, h, margin)
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    ys = np.linspace(y0, y1, size)
    xs = np.linspace(x0, x1, size)
    out = _bilinear(img, ys, xs)
    pixels = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return CellCrop(pixels, box, image_id)


def _cell_mask(gray: np.ndarray) -> np.ndarray:
    # the crop border is mostly background plasma; the cell is darker
    border = np.concatenate([gray[0], gray[-1], gray[1:-1, 0], gray[1:-1, -1]])
    return gray < float(np.median(border)) - 15.0


def _perimeter(mask: np.ndarray) -> int:
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return int((mask & ~interior).sum())


def extract_features(crop: CellCrop) -> np.ndarray:
    """30 values: 8-bin histogram per channel, cell shape, chromatin stain."""
    px = crop.pixels
    feats = []
    for c in range(3):
        hist = np.bincount(px[..., c].ravel() >> 5, minlength=8).astype(np.float64)
        feats.extend(hist / hist.sum())
    gray = to_grayscale(px).astype(np.float64)
    mask = _cell_mask(gray)
    area = int(mask.sum())
    perim = _perimeter(mask)
    feats.append(area / mask.size)
    feats.append(perim / area if area else 0.0)
    feats.append(4 * math.pi * area / perim ** 2 if perim else 0.0)
    q = px.shape[0] // 4
    centre = gray[q:-q, q:-q] / 255.0
    feats.append(float(centre.mean()))
    feats.append(float(centre.std()))
    feats.append(float((gray < DARK_LEVEL).mean()))
    return np.asarray(feats, dtype=np.float64)


def crop_features(img: np.ndarray, boxes: Sequence[BoundingBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, NUM_FEATURES))
    return np.stack([extract_features(extract_crop(img, b)) for b in boxes])


# -- softmax models --------------------------------------------------------

class Classifier(Protocol):
    class_names: list[str]

    def predict_proba(self, features: np.ndarray) -> np.ndarray: ...


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SoftmaxClassifier:
    weights: np.ndarray  # (num_classes, num_features)
    bias: np.ndarray  # (num_classes,)
    class_names: list[str]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        k = len(self.class_names)
        if self.weights.ndim != 2 or self.weights.shape[0] != k or self.bias.shape != (k,):
            raise ClassificationError("weights/bias shape does not match class_names")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ClassificationError("non-finite model parameters")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_features(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, class_names, num_features: int = NUM_FEATURES) -> "SoftmaxClassifier":
        k = len(class_names)
        return cls(np.zeros((k, num_features)), np.zeros(k), list(class_names))

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.shape[-1] != self.num_features:
            raise ClassificationError(
                f"feature dimension {f.shape[-1]} != model dimension {self.num_features}")
        return softmax(f @ self.weights.T + self.bias)

    def to_dict(self) -> dict:
        return {"format": MODEL_FORMAT, "num_classes": self.num_classes,
                "class_names": list(self.class_names),
                "weights": self.weights.tolist(), "bias": self.bias.tolist(),
                "feature_spec": FEATURE_SPEC}

    @classmethod
    def from_dict(cls, d: dict) -> "SoftmaxClassifier":
        if d.get("format") != MODEL_FORMAT:
            raise ClassificationError(f"expected model format {MODEL_FORMAT!r}")
        if d.get("feature_spec") != FEATURE_SPEC:
            raise ClassificationError(f"unsupported feature_spec {d.get('feature_spec')!r}")
        clf = cls(d["weights"], d["bias"], list(d["class_names"]))
        if clf.num_classes != d["num_classes"]:
            raise ClassificationError("num_classes disagrees with class_names")
        return clf


def predict(clf: Classifier, f: np.ndarray) -> np.ndarray:
    return clf.predict_proba(f)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.5
    epochs: int = 500
    l2: float = 1e-3
    seed: int = 0
    init_scale: float = 0.01
    # fit on z-scored features, then fold the scaling into W and b
    standardize: bool = True


def loss_and_grad(weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray,
                  l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2 * |W|^2 / 2``, with its analytic gradient."""
    n = x.shape[0]
    logits = x @ weights.T + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -log_p[np.arange(n), y].mean() + 0.5 * l2 * float((weights ** 2).sum())
    delta = np.exp(log_p)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return float(loss), delta.T @ x + l2 * weights, delta.sum(axis=0)


def train(clf: SoftmaxClassifier, features: np.ndarray, labels: Sequence[int],
          hp: TrainConfig = TrainConfig()) -> SoftmaxClassifier:
    """Full-batch gradient descent from a seeded small random start.

    ``clf`` supplies the class list and feature width; its parameters are
    not used. With ``hp.standardize`` the descent runs on z-scored features
    and the returned weights apply to raw features. Returns a new classifier.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    k, d = clf.num_classes, clf.num_features
    if x.ndim != 2 or x.shape[1] != d or x.shape[0] != y.shape[0]:
        raise ClassificationError("training data shape does not match the model")
    present = np.bincount(y, minlength=k) if y.size else np.zeros(k, dtype=int)
    for i in range(k):
        if present[i] == 0:
            raise ClassificationError(f"empty class: {clf.class_names[i]}")
    mu, sd = np.zeros(d), np.ones(d)
    if hp.standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd < 1e-12] = 1.0
        x = (x - mu) / sd
    rng = np.random.Generator(np.random.PCG64(hp.seed))
    w = rng.normal(0.0, hp.init_scale, (k, d))
    b = np.zeros(k)
    for _ in range(hp.epochs):
        _, gw, gb = loss_and_grad(w, b, x, y, hp.l2)
        w -= hp.lr * gw
        b -= hp.lr * gb
    w = w / sd
    return SoftmaxClassifier(w, b - w @ mu, list(clf.class_names))


def argmax_label(probs: np.ndarray) -> int:
    # np.argmax returns the first maximum: lowest label id wins ties
    return int(np.argmax(probs))


# -- SSC / TSC -------------------------------------------------------------

@dataclass
class CascadeModel:
    stage1: Classifier  # healthy / infected
    stage2: Classifier  # all five stages, healthy included

    def __post_init__(self):
        if len(self.stage1.class_names) != 2:
            raise ClassificationError("stage 1 must be a 2-class model")
        if list(self.stage2.class_names) != STAGE_NAMES:
            raise ClassificationError("stage 2 must predict all five stages, healthy included")

    def to_dict(self) -> dict:
        return {"format": CASCADE_FORMAT, "stage1": self.stage1.to_dict(),
                "stage2": self.stage2.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeModel":
        if d.get("format") != CASCADE_FORMAT:
            raise ClassificationError(f"expected model format {CASCADE_FORMAT!r}")
        return cls(SoftmaxClassifier.from_dict(d["stage1"]),
                   SoftmaxClassifier.from_dict(d["stage2"]))


@dataclass(frozen=True)
class Prediction:
    label: StageLabel
    stage1_probs: np.ndarray
    stage2_probs: Optional[np.ndarray] = None


def classify_ssc_features(model: Classifier, f: np.ndarray) -> Prediction:
    if len(model.class_names) != len(StageLabel):
        raise ClassificationError("single-stage model must have five classes")
    probs = model.predict_proba(f)
    return Prediction(StageLabel(argmax_label(probs)), probs)


def classify_tsc_features(model: CascadeModel, f: np.ndarray) -> Prediction:
    p1 = model.stage1.predict_proba(f)
    if argmax_label(p1) == 0:
        return Prediction(StageLabel.HEALTHY, p1)
    p2 = model.stage2.predict_proba(f)
    # stage 2 may still say healthy: that overrides a stage-1 false alarm
    return Prediction(StageLabel(argmax_label(p2)), p1, p2)


def classify_features(model, f: np.ndarray) -> Prediction:
    if isinstance(model, CascadeModel):
        return classify_tsc_features(model, f)
    return classify_ssc_features(model, f)


def classify_ssc(model: Classifier, crop: CellCrop) -> Prediction:
    return classify_ssc_features(model, extract_features(crop))


def classify_tsc(model: CascadeModel, crop: CellCrop) -> Prediction:
    return classify_tsc_features(model, extract_features(crop))


def balanced_stage2_subset(labels: Sequence[int], seed: int = 0) -> np.ndarray:
    """Indices of all infected cells plus a seeded sample of healthy ones.

    The healthy sample size is the rounded mean of the four infected class
    counts, capped by the number of healthy cells available.
    """
    y = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(y, minlength=len(StageLabel))
    for s in INFECTED_STAGES:
        if counts[s] == 0:
            raise ClassificationError(f"empty class: {s.label_name}")
    # half-up rounding of the mean, done in integers
    target = (2 * int(sum(counts[s] for s in INFECTED_STAGES)) + 4) // 8
    healthy = np.flatnonzero(y == StageLabel.HEALTHY)
    infected = np.flatnonzero(y != StageLabel.HEALTHY)
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = min(target, healthy.size)
    picked = rng.choice(healthy, size=keep, replace=False) if keep else healthy[:0]
    return np.sort(np.concatenate([infected, picked]))


def train_ssc(features: np.ndarray, labels: Sequence[int],
              hp: TrainConfig = TrainConfig()) -> SoftmaxClassifier:
    return train(SoftmaxClassifier.zeros(STAGE_NAMES, features.shape[1]), features, labels, hp)


def train_tsc(features: np.ndarray, labels: Sequence[int],
              hp: TrainConfig = TrainConfig()) -> CascadeModel:
    """Stage 1 on every cell (healthy vs infected), stage 2 on a balanced subset."""
    y = np.asarray(labels, dtype=np.int64)
    stage1 = train(SoftmaxClassifier.zeros(STAGE1_NAMES, features.shape[1]),
                   features, (y != StageLabel.HEALTHY).astype(np.int64), hp)
    idx = balanced_stage2_subset(y, hp.seed)
    stage2 = train(SoftmaxClassifier.zeros(STAGE_NAMES, features.shape[1]),
                   features[idx], y[idx], hp)
    return CascadeModel(stage1, stage2)


# -- persistence -----------------------------------------------------------

def model_to_json(model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"))


def model_hash(model) -> str:
    return hashlib.sha256(model_to_json(model).encode()).hexdigest()


def model_from_dict(d: dict):
    if d.get("format") == CASCADE_FORMAT:
        return CascadeModel.from_dict(d)
    return SoftmaxClassifier.from_dict(d)


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ClassificationError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(d)
