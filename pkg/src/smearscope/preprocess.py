"""Removal of the dark vignette around eyepiece-captured fields of view."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import BoundingBox
from .imaging import (as_rgb, binarize, connected_components, equalize_histogram,
                      otsu, to_grayscale)


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    dark_cutoff: int = 40
    ratio_cutoff: float = 0.5
    skip_vignette: bool = False


@dataclass(frozen=True)
class CropReport:
    original_size: tuple[int, int]  # (w, h)
    contour_crop_rect: BoundingBox
    ratio_crop_rect: BoundingBox  # in original-image coordinates
    dark_intensity_cutoff: int
    dark_ratio_cutoff: float

    def to_dict(self) -> dict:
        return {
            "original_size": list(self.original_size),
            "contour_crop_rect": self.contour_crop_rect.to_dict(),
            "ratio_crop_rect": self.ratio_crop_rect.to_dict(),
            "dark_intensity_cutoff": self.dark_intensity_cutoff,
            "dark_ratio_cutoff": self.dark_ratio_cutoff,
        }


def crop(img: np.ndarray, box: BoundingBox) -> np.ndarray:
    return img[box.y:box.y1, box.x:box.x1]


def crop_largest_contour(img: np.ndarray) -> tuple[np.ndarray, BoundingBox]:
    """Crop to the bounding box of the largest bright region."""
    img = as_rgb(img)
    h, w = img.shape[:2]
    if h < 32 or w < 32:
        raise PreprocessError("image must be at least 32x32")
    gray = equalize_histogram(to_grayscale(img))
    res = otsu(gray)
    if res.degenerate:
        # a uniform frame has no vignette unless it is uniformly black
        if res.threshold == 0:
            raise PreprocessError("no bright field found")
        return img.copy(), BoundingBox.full(w, h)
    lm = connected_components(binarize(gray, res.threshold, "above"), 8)
    if lm.num_labels == 0:
        raise PreprocessError("no bright field found")
    areas = lm.areas()
    areas[0] = 0
    ys, xs = np.nonzero(lm.labels == int(np.argmax(areas)))
    box = BoundingBox(int(xs.min()), int(ys.min()),
                      int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    return crop(img, box).copy(), box


def crop_by_dark_ratio(img: np.ndarray, dark_cutoff: int = 40,
                       ratio_cutoff: float = 0.5) -> tuple[np.ndarray, BoundingBox]:
    """Trim edge rows/columns whose dark-pixel fraction exceeds ``ratio_cutoff``.

    Trimming walks inward from each edge and stops at the first row or
    column that survives; interior dark bands are kept.
    """
    img = as_rgb(img)
    dark = to_grayscale(img) < dark_cutoff
    row_frac = dark.mean(axis=1)
    keep_rows = np.flatnonzero(row_frac <= ratio_cutoff)
    if keep_rows.size == 0:
        raise PreprocessError("no content rows survive")
    y0, y1 = int(keep_rows[0]), int(keep_rows[-1]) + 1
    # columns are judged on the surviving rows only
    col_frac = dark[y0:y1].mean(axis=0)
    keep_cols = np.flatnonzero(col_frac <= ratio_cutoff)
    if keep_cols.size == 0:
        raise PreprocessError("no content columns survive")
    x0, x1 = int(keep_cols[0]), int(keep_cols[-1]) + 1
    box = BoundingBox(x0, y0, x1 - x0, y1 - y0)
    return crop(img, box).copy(), box


def preprocess_field(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()
                     ) -> tuple[np.ndarray, CropReport]:
    img = as_rgb(img)
    h, w = img.shape[:2]
    if cfg.skip_vignette:
        full = BoundingBox.full(w, h)
        return img.copy(), CropReport((w, h), full, full, cfg.dark_cutoff, cfg.ratio_cutoff)
    stage1, contour_box = crop_largest_contour(img)
    stage2, inner = crop_by_dark_ratio(stage1, cfg.dark_cutoff, cfg.ratio_cutoff)
    final = inner.shifted(contour_box.x, contour_box.y)
    return stage2, CropReport((w, h), contour_box, final, cfg.dark_cutoff, cfg.ratio_cutoff)
