"""Raster types and classical image-processing primitives.

Images are plain numpy arrays:

* RGB image: ``(H, W, 3)`` uint8
* gray image: ``(H, W)`` uint8
* binary mask: ``(H, W)`` bool, True = foreground

Label maps carry their label count alongside the array (:class:`LabelMap`).
All functions are pure and never modify their inputs.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from PIL import Image

# Tiles whose best between-class variance is below this use the global threshold.
DEGENERATE_TILE_VARIANCE = 1.0
MIN_TILE_SIZE = 8


class ImageError(ValueError):
    pass


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def as_rgb(data) -> np.ndarray:
    img = np.asarray(data)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ImageError(f"expected 8-bit channels, got {img.dtype}")
    return img


def as_gray(data) -> np.ndarray:
    img = np.asarray(data)
    if img.ndim != 2 or img.size == 0:
        raise ImageError(f"expected a non-empty (H, W) image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ImageError(f"expected 8-bit intensities, got {img.dtype}")
    return img


# -- decode / encode -------------------------------------------------------

def decode_image(data: bytes) -> np.ndarray:
    """Decode PNG or JPEG bytes into an RGB array."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format not in ("PNG", "JPEG"):
                raise ImageError(f"unsupported image format {im.format}")
            return np.array(im.convert("RGB"), dtype=np.uint8)
    except ImageError:
        raise
    except Exception as exc:
        raise ImageError(f"cannot decode image: {exc}") from exc


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    # fixed compression settings keep the byte stream reproducible
    Image.fromarray(np.ascontiguousarray(img)).save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def write_png(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


# -- intensity -------------------------------------------------------------

def to_grayscale(img: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma, rounded half up."""
    rgb = as_rgb(img).astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(_round_half_up(y), 0, 255).astype(np.uint8)


def equalize_histogram(img: np.ndarray) -> np.ndarray:
    """Classic cdf-based histogram equalization.

    A constant image has no usable cdf range and is returned unchanged
    (see :func:`is_constant`).
    """
    gray = as_gray(img)
    hist = np.bincount(gray.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = gray.size
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    if cdf_min == n:
        return gray.copy()
    lut = _round_half_up(255.0 * (cdf - cdf_min) / (n - cdf_min))
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return lut[gray]


def is_constant(img: np.ndarray) -> bool:
    return bool(img.min() == img.max())


class OtsuResult(NamedTuple):
    threshold: int
    variance: float  # between-class variance at the threshold, intensity^2 units
    degenerate: bool


def otsu(img: np.ndarray) -> OtsuResult:
    """Otsu's threshold with exact (integer) comparison of candidates.

    The lower class is ``pixels <= t``. Among thresholds with equal
    between-class variance the smallest wins. A constant image yields its
    own value and ``degenerate=True``.
    """
    gray = as_gray(img)
    hist = np.bincount(gray.ravel(), minlength=256).tolist()
    n = gray.size
    total = sum(v * c for v, c in enumerate(hist))
    if max(hist) == n:
        return OtsuResult(int(gray.flat[0]), 0.0, True)

    # variance(t) * n^2 = (s0*n1 - s1*n0)^2 / (n0*n1); compare as exact fractions
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        diff = s0 * n1 - (total - s0) * n0
        num, den = diff * diff, n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return OtsuResult(best_t, best_num / best_den / (n * n), False)


def otsu_threshold(img: np.ndarray) -> int:
    return otsu(img).threshold


def binarize(img: np.ndarray, t: int, polarity: str = "above") -> np.ndarray:
    """Split at ``t``: ``above`` keeps ``> t``, ``below`` keeps ``<= t``.

    The two polarities are complements, matching Otsu's two classes.
    """
    gray = np.asarray(img)
    if polarity == "above":
        return gray > t
    if polarity == "below":
        return gray <= t
    raise ValueError(f"unknown polarity {polarity!r}")


def tile_edges(size: int, parts: int) -> list[int]:
    return [i * size // parts for i in range(parts + 1)]


def tiled_otsu(img: np.ndarray, grid_rows: int = 4, grid_cols: int = 4,
               polarity: str = "above") -> np.ndarray:
    """Per-tile Otsu binarization, tiles concatenated without blending.

    Near-uniform tiles (best variance below ``DEGENERATE_TILE_VARIANCE``)
    use the global threshold. If the whole image is constant there is no
    contrast anywhere and the mask is empty.
    """
    gray = as_gray(img)
    if grid_rows < 1 or grid_cols < 1:
        raise ImageError("grid dimensions must be >= 1")
    h, w = gray.shape
    if h // grid_rows < MIN_TILE_SIZE or w // grid_cols < MIN_TILE_SIZE:
        raise ImageError("grid too fine")

    glob = otsu(gray)
    if glob.degenerate:
        return np.zeros(gray.shape, dtype=bool)

    out = np.zeros(gray.shape, dtype=bool)
    rows, cols = tile_edges(h, grid_rows), tile_edges(w, grid_cols)
    for r0, r1 in zip(rows[:-1], rows[1:]):
        for c0, c1 in zip(cols[:-1], cols[1:]):
            tile = gray[r0:r1, c0:c1]
            res = otsu(tile)
            t = glob.threshold if res.variance < DEGENERATE_TILE_VARIANCE else res.threshold
            out[r0:r1, c0:c1] = binarize(tile, t, polarity)
    return out


# -- morphology ------------------------------------------------------------

@dataclass(frozen=True)
class StructuringElement:
    shape: str = "disk"
    radius: int = 1

    def __post_init__(self):
        if self.shape not in ("disk", "square", "cross"):
            raise ValueError(f"unknown structuring element shape {self.shape!r}")
        if self.radius < 1:
            raise ValueError("structuring element radius must be >= 1")

    def footprint(self) -> np.ndarray:
        r = self.radius
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        if self.shape == "square":
            return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        if self.shape == "cross":
            return (xx == 0) | (yy == 0)
        return xx * xx + yy * yy <= r * r


def erode(mask: np.ndarray, se: StructuringElement, iterations: int = 1) -> np.ndarray:
    """Binary erosion; pixels outside the image count as background."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=se.footprint(),
                                  iterations=iterations, border_value=0)


def dilate(mask: np.ndarray, se: StructuringElement, iterations: int = 1) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=se.footprint(),
                                   iterations=iterations, border_value=0)


def open_mask(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return dilate(erode(mask, se), se)


# -- labelling and distances -----------------------------------------------

@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray  # (H, W) int32, 0 = background
    num_labels: int

    @property
    def shape(self):
        return self.labels.shape

    def areas(self) -> np.ndarray:
        """Pixel count per label; index 0 is the background."""
        return np.bincount(self.labels.ravel(), minlength=self.num_labels + 1)


_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components(mask: np.ndarray, connectivity: int = 8) -> LabelMap:
    """Label foreground regions 1..k in order of first raster encounter."""
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    labels, k = ndimage.label(np.asarray(mask, dtype=bool), structure=_STRUCTURE[connectivity])
    return LabelMap(labels.astype(np.int32), int(k))


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest background pixel.

    The frame outside the image is background, so a full-foreground image
    still has finite distances.
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
