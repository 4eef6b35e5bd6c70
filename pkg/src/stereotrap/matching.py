"""Dense disparity from rectified pairs: census cost volume, semi-global
aggregation, winner-take-all with subpixel refinement, left-right check.

Disparity convention: pixel (x, y) in the left rectified image matches
(x - d, y) in the right rectified image, d in [0, max_disparity].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .rasters import DisparityMap, GrayImage

__all__ = [
    "MatcherParams",
    "census_transform",
    "census_cost_volume",
    "sgm_aggregate",
    "extract_disparity",
    "lr_consistency",
    "compute_disparity",
]

N_DIRECTIONS = 8


@dataclass
class MatcherParams:
    """Classical matcher defaults; penalties are on the census Hamming scale."""

    max_disparity: int = 192
    p1: float = 10.0
    p2: float = 120.0
    census_window: int = 5
    lr_tolerance: float = 1.0


def census_transform(img: GrayImage, window: int = 5) -> np.ndarray:
    """Per-pixel census code: bit set where the neighbor is darker than the center.

    Borders use edge-replicated padding. Window must be odd with at most 65
    samples (codes are packed into uint64).
    """
    if window % 2 == 0 or window < 3 or window * window - 1 > 64:
        raise ValueError("census window must be odd, >= 3 and <= 8x8")
    h, w = img.shape
    r = window // 2
    padded = np.pad(img.pixels, r, mode="edge")
    center = img.pixels
    code = np.zeros((h, w), dtype=np.uint64)
    bit = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neigh = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            code |= (neigh < center).astype(np.uint64) << np.uint64(bit)
            bit += 1
    return code


def census_cost_volume(left: GrayImage, right: GrayImage, max_disparity: int,
                       window: int = 5) -> np.ndarray:
    """(H, W, max_disparity + 1) Hamming costs; out-of-range candidates get a sentinel."""
    if left.shape != right.shape:
        raise DimensionMismatch(f"left {left.shape} != right {right.shape}")
    if max_disparity < 0:
        raise ValueError("max_disparity must be >= 0")
    cl = census_transform(left, window)
    cr = census_transform(right, window)
    h, w = left.shape
    n_bits = window * window - 1
    sentinel = min(2 * n_bits, 255)
    volume = np.full((h, w, max_disparity + 1), sentinel, dtype=np.uint8)
    for d in range(min(max_disparity, w - 1) + 1):
        if d == 0:
            ham = np.bitwise_count(cl ^ cr)
        else:
            ham = np.bitwise_count(cl[:, d:] ^ cr[:, :-d])
        volume[:, d:, d] = ham.astype(np.uint8)
    return volume


def _penalty_adjustment(prev: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """SGM recurrence term: min over same/±1/jump transitions, minus the path min."""
    m = prev.min(axis=-1, keepdims=True)
    best = np.minimum(prev, m + p2)
    best[..., 1:] = np.minimum(best[..., 1:], prev[..., :-1] + p1)
    best[..., :-1] = np.minimum(best[..., :-1], prev[..., 1:] + p1)
    return best - m


def _sweep_horizontal(cost: np.ndarray, p1: float, p2: float) -> np.ndarray:
    out = np.empty_like(cost)
    out[:, 0] = cost[:, 0]
    for x in range(1, cost.shape[1]):
        out[:, x] = cost[:, x] + _penalty_adjustment(out[:, x - 1], p1, p2)
    return out

def _sweep_vertical(cost: np.ndarray, p1: float, p2: float) -> np.ndarray:
    out = np.empty_like(cost)
    out[0] = cost[0]
    for y in range(1, cost.shape[0]):
        out[y] = cost[y] + _penalty_adjustment(out[y - 1], p1, p2)
    return out

def _sweep_diagonal(cost: np.ndarray, p1: float, p2: float, dx: int) -> np.ndarray:
    # top-to-bottom; predecessor of (y, x) is (y - 1, x - dx)
    out = np.empty_like(cost)
    out[0] = cost[0]
    for y in range(1, cost.shape[0]):
        adj = _penalty_adjustment(out[y - 1], p1, p2)
        shifted = np.zeros_like(adj)
        if dx == 1:
            shifted[1:] = adj[:-1]
        else:
            shifted[:-1] = adj[1:]
        out[y] = cost[y] + shifted
    return out


def sgm_aggregate(volume: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """Mean of path costs over 8 scanline directions (standard SGM recurrence).

    Averaging (rather than summing) keeps the result on the raw-cost scale, so
    a pixel with no neighbors aggregates to exactly its own cost.
    """
    if not (p2 >= p1 > 0):
        raise ValueError("penalties must satisfy p2 >= p1 > 0")
    cost = np.asarray(volume, dtype=np.float64)
    if cost.ndim != 3:
        raise DimensionMismatch("cost volume must be (H, W, D)")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost volume must be finite")

    total = _sweep_horizontal(cost, p1, p2)
    total += _sweep_horizontal(cost[:, ::-1], p1, p2)[:, ::-1]
    total += _sweep_vertical(cost, p1, p2)
    total += _sweep_vertical(cost[::-1], p1, p2)[::-1]
    total += _sweep_diagonal(cost, p1, p2, 1)
    total += _sweep_diagonal(cost, p1, p2, -1)
    total += _sweep_diagonal(cost[::-1], p1, p2, 1)[::-1]
    total += _sweep_diagonal(cost[::-1], p1, p2, -1)[::-1]
    return total / N_DIRECTIONS


def extract_disparity(volume: np.ndarray) -> DisparityMap:
    """Winner-take-all argmin with quadratic subpixel refinement.

    Ties resolve to the smaller disparity and stay integer-valued, as do
    pixels whose winner sits at either end of the disparity range.
    """
    cost = np.asarray(volume, dtype=np.float64)
    if cost.ndim != 3:
        raise DimensionMismatch("cost volume must be (H, W, D)")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost volume must be finite")
    h, w, planes = cost.shape
    best = np.argmin(cost, axis=2)
    disp = best.astype(np.float64)

    if planes >= 3:
        interior = (best > 0) & (best < planes - 1)
        ys, xs = np.nonzero(interior)
        d = best[ys, xs]
        c0 = cost[ys, xs, d - 1]
        c1 = cost[ys, xs, d]
        c2 = cost[ys, xs, d + 1]
        denom = c0 - 2.0 * c1 + c2
        strict = (c0 > c1) & (c2 > c1) & (denom > 0)
        offset = np.zeros_like(c0)
        np.divide(c0 - c2, 2.0 * denom, out=offset, where=strict)
        disp[ys, xs] = d + np.clip(offset, -0.5, 0.5)

    return DisparityMap(disp, np.ones((h, w), dtype=bool), float(planes - 1))


def lr_consistency(left_disp: DisparityMap, right_disp: DisparityMap,
                   tol: float = 1.0) -> DisparityMap:
    """Invalidate left pixels whose right-view disparity disagrees by more than tol.

    The right map is sampled at the nearest integer column x - d_left; samples
    falling outside the image or on invalid right pixels count as infinite
    disagreement (so tol=inf keeps the input mask unchanged).
    """
    if left_disp.shape != right_disp.shape:
        raise DimensionMismatch("disparity maps must share dimensions")
    h, w = left_disp.shape
    xs = np.arange(w)[None, :] - left_disp.disparities
    xr = np.rint(xs).astype(np.intp)
    inb = (xr >= 0) & (xr < w)
    xr_safe = np.clip(xr, 0, w - 1)
    ys = np.broadcast_to(np.arange(h)[:, None], (h, w))
    dr = right_disp.disparities[ys, xr_safe]
    defined = inb & right_disp.valid[ys, xr_safe]
    diff = np.where(defined, np.abs(left_disp.disparities - dr), np.inf)
    valid = left_disp.valid & (diff <= tol)
    return DisparityMap(np.where(valid, left_disp.disparities, 0.0), valid,
                        left_disp.max_disparity)


def _flip_gray(img: GrayImage) -> GrayImage:
    return GrayImage(img.pixels[:, ::-1].copy(), img.valid[:, ::-1].copy())


def compute_disparity(left: GrayImage, right: GrayImage,
                      params: MatcherParams = None,
                      lr_check: bool = True) -> DisparityMap:
    """Full matcher: census costs, SGM aggregation, subpixel WTA, optional LR check.

    The returned validity mask is the left image's mask, shrunk by the
    consistency check when enabled.
    """
    params = params or MatcherParams()
    vol = census_cost_volume(left, right, params.max_disparity, params.census_window)
    disp = extract_disparity(sgm_aggregate(vol, params.p1, params.p2))
    if lr_check:
        # right-referenced disparity via the horizontal-flip trick
        vol_r = census_cost_volume(_flip_gray(right), _flip_gray(left),
                                   params.max_disparity, params.census_window)
        disp_r = extract_disparity(sgm_aggregate(vol_r, params.p1, params.p2))
        disp_r = DisparityMap(disp_r.disparities[:, ::-1].copy(),
                              disp_r.valid[:, ::-1].copy(), disp_r.max_disparity)
        disp = lr_consistency(disp, disp_r, params.lr_tolerance)
    valid = disp.valid & left.valid
    return DisparityMap(np.where(valid, disp.disparities, 0.0), valid,
                        disp.max_disparity)
