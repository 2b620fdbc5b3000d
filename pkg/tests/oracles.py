"""Slow, obviously-correct reference implementations used only by tests."""
from __future__ import annotations

import itertools
import math
from collections import deque
from fractions import Fraction

import numpy as np


def otsu_brute(gray: np.ndarray) -> int:
    """Scan all 256 thresholds with exact rational arithmetic; smallest argmax."""
    px = gray.ravel().tolist()
    n = len(px)
    best_t, best = 0, Fraction(-1)
    for t in range(256):
        lo = [v for v in px if v <= t]
        hi = [v for v in px if v > t]
        if not lo or not hi:
            var = Fraction(0)
        else:
            m0 = Fraction(sum(lo), len(lo))
            m1 = Fraction(sum(hi), len(hi))
            var = Fraction(len(lo), n) * Fraction(len(hi), n) * (m0 - m1) ** 2
        if var > best:
            best_t, best = t, var
    return best_t


def distance_brute(mask: np.ndarray) -> np.ndarray:
    """Nearest background pixel by exhaustive search, frame included."""
    h, w = mask.shape
    bg = [(y, x) for y in range(-1, h + 1) for x in range(-1, w + 1)
          if not (0 <= y < h and 0 <= x < w) or not mask[y, x]]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                out[y, x] = math.sqrt(min((y - by) ** 2 + (x - bx) ** 2 for by, bx in bg))
    return out


def components_bfs(mask: np.ndarray, connectivity: int) -> list[frozenset]:
    """Foreground partition as a list of pixel sets in first-raster order."""
    h, w = mask.shape
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
    seen = np.zeros_like(mask, dtype=bool)
    parts = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                comp, q = set(), deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    comp.add((cy, cx))
                    for dy, dx in steps:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                parts.append(frozenset(comp))
    return parts


def partition_of(labels: np.ndarray) -> set[frozenset]:
    out = {}
    for (y, x), v in np.ndenumerate(labels):
        if v:
            out.setdefault(int(v), set()).add((y, x))
    return {frozenset(s) for s in out.values()}


def erode_brute(mask: np.ndarray, footprint: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    r = footprint.shape[0] // 2
    offs = [(dy - r, dx - r) for dy, dx in zip(*np.nonzero(footprint))]
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = all(0 <= y + dy < h and 0 <= x + dx < w and mask[y + dy, x + dx]
                            for dy, dx in offs)
    return out


def max_bipartite_matching(gt, pred, iou_fn, thresh: float) -> int:
    """Maximum number of disjoint (gt, pred) pairs with IoU > thresh, by enumeration."""
    edges = {(i, j) for i, g in enumerate(gt) for j, p in enumerate(pred) if iou_fn(g, p) > thresh}
    best = 0
    for k in range(min(len(gt), len(pred)), 0, -1):
        for gs in itertools.combinations(range(len(gt)), k):
            for ps in itertools.permutations(range(len(pred)), k):
                if all((g, p) in edges for g, p in zip(gs, ps)):
                    return k
    return best


def numeric_grad(f, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``params``."""
    grad = np.zeros_like(params)
    it = np.nditer(params, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = params[idx]
        params[idx] = old + h
        fp = f()
        params[idx] = old - h
        fm = f()
        params[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def equalize_reference(gray: np.ndarray) -> np.ndarray:
    """Pixel-by-pixel evaluation of the cdf mapping formula."""
    vals = gray.ravel().tolist()
    n = len(vals)
    counts = [0] * 256
    for v in vals:
        counts[v] += 1
    cdf, acc = [], 0
    for c in counts:
        acc += c
        cdf.append(acc)
    cdf_min = min(c for c in cdf if c > 0)
    if cdf_min == n:
        return gray.copy()
    lut = [math.floor(255 * Fraction(cdf[v] - cdf_min, n - cdf_min) + Fraction(1, 2))
           for v in range(256)]
    return np.array([lut[v] for v in vals], dtype=np.uint8).reshape(gray.shape)


def otsu_exhaustive(gray: np.ndarray) -> int:
    """Exhaustive 256-threshold scan, exact in integers, no cumulative sums.

    Between-class variance at t is (s0*n1 - s1*n0)^2 / (N^2 n0 n1); the
    common N^2 is dropped and candidates are compared by cross-multiplying.
    """
    px = gray.ravel().astype(np.int64)
    lo = px[None, :] <= np.arange(256)[:, None]
    n0 = lo.sum(axis=1).tolist()
    s0 = (lo * px[None, :]).sum(axis=1).tolist()
    n, s = int(px.size), int(px.sum())
    best_t, best_num, best_den = 0, -1, 1
    for t in range(256):
        a, b = n0[t], n - n0[t]
        if a == 0 or b == 0:
            num, den = 0, 1
        else:
            num, den = (s0[t] * b - (s - s0[t]) * a) ** 2, a * b
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def distance_exhaustive(mask: np.ndarray) -> np.ndarray:
    """Nearest background (frame included) by comparing every pixel pair."""
    h, w = mask.shape
    padded = np.pad(mask, 1, constant_values=False)
    by, bx = np.nonzero(~padded)
    fy, fx = np.nonzero(padded)
    d2 = (fy[:, None] - by[None, :]) ** 2 + (fx[:, None] - bx[None, :]) ** 2
    out = np.zeros((h + 2, w + 2))
    if fy.size:
        out[fy, fx] = np.sqrt(d2.min(axis=1))
    return out[1:-1, 1:-1]
