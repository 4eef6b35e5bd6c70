"""Camera models, stereo rectification, disparity-to-depth and extrinsics estimation.

Conventions used throughout:

* A point ``X_l`` in left-camera coordinates maps to right-camera coordinates
  as ``X_r = R @ X_l + t`` (rotation/translation of the rig extrinsics).
* Normalized coordinates are ``x = (u - cx) / fx``, ``y = (v - cy) / fy``.
* Distortion is the 4-coefficient radial-tangential (Brown-Conrady) model.
* After rectification the baseline lies along -x, so disparity
  ``d = u_left - u_right`` is non-negative for points in front of the rig and
  depth is ``z = rectified_baseline * rectified_fx / d``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateConfiguration,
    DegenerateGeometry,
    DimensionMismatch,
    InsufficientPoints,
    NonConvergence,
)
from .rasters import DepthMap, DisparityMap, GrayImage, bilinear_sample

__all__ = [
    "Intrinsics",
    "Extrinsics",
    "CalibrationSet",
    "RectificationMap",
    "EightPointResult",
    "distort_point",
    "undistort_point",
    "compute_rectification",
    "rectified_pixel",
    "remap",
    "disparity_to_depth",
    "depth_from_disparity",
    "estimate_essential_8pt",
    "load_calibration",
    "save_calibration",
]

DEFAULT_MIN_DISPARITY = 0.1


@dataclass
class Intrinsics:
    """Pinhole intrinsics with radial-tangential distortion, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")


@dataclass
class Extrinsics:
    """Rigid transform between the two cameras of the rig."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,), meters

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.2e})")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        if np.linalg.norm(self.translation) <= 0.0:
            raise ValueError("baseline must be nonzero")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.translation))


@dataclass
class CalibrationSet:
    """Full calibration of a stereo rig."""

    left: Intrinsics
    right: Intrinsics
    stereo: Extrinsics

    def __post_init__(self):
        if (self.left.width, self.left.height) != (self.right.width, self.right.height):
            raise ValueError("left and right sensors must share a resolution")


@dataclass
class RectificationMap:
    """Per-pixel source coordinates that warp raw frames into rectified ones."""

    left_coords: np.ndarray   # (H, W, 2) source (x, y), sub-pixel
    right_coords: np.ndarray
    left_valid: np.ndarray    # (H, W) bool
    right_valid: np.ndarray
    rectified_fx: float
    rectified_cx: float
    rectified_cy: float
    rectified_baseline: float
    left_rotation: np.ndarray   # (3, 3), source left cam -> rectified left cam
    right_rotation: np.ndarray

    def __post_init__(self):
        if self.rectified_fx <= 0 or self.rectified_baseline <= 0:
            raise ValueError("rectified focal length and baseline must be positive")
        h, w = self.left_valid.shape
        for coords, valid in ((self.left_coords, self.left_valid),
                              (self.right_coords, self.right_valid)):
            xs, ys = coords[..., 0][valid], coords[..., 1][valid]
            if xs.size and not (
                (xs >= 0).all() and (xs <= w - 1).all()
                and (ys >= 0).all() and (ys <= h - 1).all()
            ):
                raise ValueError("valid map entries must point inside the source image")

    @property
    def shape(self) -> tuple[int, int]:
        return self.left_valid.shape


# ---------------------------------------------------------------------------
# Distortion model

def _distort_normalized(x: np.ndarray, y: np.ndarray, intr: Intrinsics):
    r2 = x * x + y * y
    radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
    xd = x * radial + 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
    return xd, yd


def distort_point(p, intr: Intrinsics) -> np.ndarray:
    """Apply the forward distortion model to ideal pixel coordinates."""
    p = np.asarray(p, dtype=np.float64)
    x = (p[..., 0] - intr.cx) / intr.fx
    y = (p[..., 1] - intr.cy) / intr.fy
    xd, yd = _distort_normalized(x, y, intr)
    return np.stack([xd * intr.fx + intr.cx, yd * intr.fy + intr.cy], axis=-1)


def undistort_point(p, intr: Intrinsics, max_iter: int = 20,
                    tol_px: float = 1e-6) -> np.ndarray:
    """Invert the distortion model: observed pixel -> ideal pixel.

    Fixed-point iteration on normalized coordinates; raises NonConvergence if
    the pixel-space residual stays above ``tol_px`` after ``max_iter`` rounds.
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("input point must be finite")
    xd = (p[..., 0] - intr.cx) / intr.fx
    yd = (p[..., 1] - intr.cy) / intr.fy
    x, y = xd.copy(), yd.copy()
    scale = max(intr.fx, intr.fy)
    for _ in range(max_iter):
        r2 = x * x + y * y
        radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
        dx = 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
        dy = intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
        x = (xd - dx) / radial
        y = (yd - dy) / radial
        cx, cy = _distort_normalized(x, y, intr)
        residual = np.hypot(cx - xd, cy - yd) * scale
        if np.all(residual < tol_px):
            return np.stack([x * intr.fx + intr.cx, y * intr.fy + intr.cy], axis=-1)
    raise NonConvergence(
        f"undistortion residual {float(np.max(residual)):.3e} px after {max_iter} iterations"
    )


# ---------------------------------------------------------------------------
# Rectification

def compute_rectification(cal: CalibrationSet) -> RectificationMap:
    """Build remap tables that make epipolar lines horizontal in both views.

    Both cameras are rotated by half the relative rotation toward each other,
    then by a common rotation that aligns the baseline with the -x axis; the
    rectified views share intrinsics (mean focal length, centered principal
    point) and keep the source resolution.
    """
    rig = cal.stereo
    b = rig.baseline
    if b < 1e-9:
        raise DegenerateGeometry("baseline is (near) zero")

    omega = Rotation.from_matrix(rig.rotation).as_rotvec()
    half_left = Rotation.from_rotvec(0.5 * omega).as_matrix()
    half_right = Rotation.from_rotvec(-0.5 * omega).as_matrix()

    t_mid = half_right @ rig.translation
    r1 = -t_mid / b
    r2 = np.cross([0.0, 0.0, 1.0], r1)
    n2 = np.linalg.norm(r2)
    if n2 < 1e-6:
        raise DegenerateGeometry("baseline is aligned with the optical axis")
    r2 /= n2
    r3 = np.cross(r1, r2)
    r_rect = np.stack([r1, r2, r3])

    rot_left = r_rect @ half_left
    rot_right = r_rect @ half_right

    w, h = cal.left.width, cal.left.height
    fx = 0.25 * (cal.left.fx + cal.left.fy + cal.right.fx + cal.right.fy)
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0

    def build(rot: np.ndarray, intr: Intrinsics):
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        rays = np.stack([(us - cx) / fx, (vs - cy) / fx, np.ones_like(us)])
        src = np.tensordot(rot.T, rays, axes=1)  # rectified ray -> source camera
        z = src[2]
        valid = z > 1e-9
        zs = np.where(valid, z, 1.0)
        xd, yd = _distort_normalized(src[0] / zs, src[1] / zs, intr)
        xs = xd * intr.fx + intr.cx
        ys = yd * intr.fy + intr.cy
        valid &= (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
        coords = np.stack([np.where(valid, xs, 0.0), np.where(valid, ys, 0.0)], axis=-1)
        return coords, valid

    left_coords, left_valid = build(rot_left, cal.left)
    right_coords, right_valid = build(rot_right, cal.right)
    if not left_valid.any() or not right_valid.any():
        raise DegenerateGeometry("rectifying rotation pushes every pixel out of view")

    return RectificationMap(
        left_coords=left_coords,
        right_coords=right_coords,
        left_valid=left_valid,
        right_valid=right_valid,
        rectified_fx=fx,
        rectified_cx=cx,
        rectified_cy=cy,
        rectified_baseline=b,
        left_rotation=rot_left,
        right_rotation=rot_right,
    )


def rectified_pixel(point, rmap: RectificationMap, side: str) -> np.ndarray:
    """Project a 3D point (in that side's *source* camera frame) into the rectified view."""
    rot = rmap.left_rotation if side == "left" else rmap.right_rotation
    p = rot @ np.asarray(point, dtype=np.float64)
    if p[2] <= 0:
        raise ValueError("point is behind the rectified camera")
    return np.array([
        rmap.rectified_fx * p[0] / p[2] + rmap.rectified_cx,
        rmap.rectified_fx * p[1] / p[2] + rmap.rectified_cy,
    ])


def remap(img: GrayImage, rmap: RectificationMap, side: str) -> GrayImage:
    """Resample a raw frame into the rectified view by bilinear interpolation."""
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if img.shape != rmap.shape:
        raise DimensionMismatch(f"image {img.shape} does not match map {rmap.shape}")
    coords = rmap.left_coords if side == "left" else rmap.right_coords
    map_valid = rmap.left_valid if side == "left" else rmap.right_valid
    vals, ok = bilinear_sample(img.pixels, coords[..., 0], coords[..., 1], img.valid)
    valid = map_valid & ok
    return GrayImage(np.clip(np.where(valid, vals, 0.0), 0.0, 1.0), valid)


# ---------------------------------------------------------------------------
# Depth

def _fx_baseline(rmap) -> tuple[float, float]:
    if isinstance(rmap, RectificationMap):
        return rmap.rectified_fx, rmap.rectified_baseline
    fx, baseline = rmap
    return float(fx), float(baseline)


def disparity_to_depth(d, rmap, d_min: float = DEFAULT_MIN_DISPARITY):
    """Convert disparity (px) to depth (m): z = baseline * fx / d.

    ``rmap`` is a RectificationMap or a plain ``(fx_px, baseline_m)`` pair.
    Disparities at or below ``d_min`` map to NaN (unreliable, near-infinite
    depth). Scalar in, scalar out; array in, array out.
    """
    fx, baseline = _fx_baseline(rmap)
    arr = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("disparities must be finite")
    reliable = arr > d_min
    z = np.where(reliable, baseline * fx / np.where(reliable, arr, 1.0), np.nan)
    if np.isscalar(d) or arr.ndim == 0:
        return float(z)
    return z


def depth_from_disparity(disp: DisparityMap, rmap,
                         d_min: float = DEFAULT_MIN_DISPARITY) -> DepthMap:
    """Elementwise disparity-to-depth; the validity mask can only shrink."""
    z = disparity_to_depth(disp.disparities, rmap, d_min)
    valid = disp.valid & np.isfinite(z)
    return DepthMap(np.where(valid, z, 1.0), valid)


# ---------------------------------------------------------------------------
# Eight-point extrinsics estimation

@dataclass
class EightPointResult:
    extrinsics: Extrinsics          # translation is unit norm (scale unknown)
    residual: float                 # mean |x2' E x1| over the input points
    n_in_front: int                 # cheirality votes for the winner


def _normalize_points(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    spread = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if spread < 1e-12:
        raise DegenerateConfiguration("correspondences are all identical")
    s = math.sqrt(2.0) / spread
    T = np.array([[s, 0, -s * centroid[0]],
                  [0, s, -s * centroid[1]],
                  [0, 0, 1.0]])
    return (pts - centroid) * s, T


def _triangulate_in_front(x1: np.ndarray, x2: np.ndarray, R: np.ndarray,
                          t: np.ndarray) -> int:
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([R, t.reshape(3, 1)])
    count = 0
    for a, b in zip(x1, x2):
        A = np.stack([
            a[0] * p1[2] - p1[0],
            a[1] * p1[2] - p1[1],
            b[0] * p2[2] - p2[0],
            b[1] * p2[2] - p2[1],
        ])
        _, _, vt = np.linalg.svd(A)
        X = vt[-1]
        if abs(X[3]) < 1e-15:
            continue
        X = X[:3] / X[3]
        z1 = X[2]
        z2 = (R @ X + t)[2]
        if z1 > 0 and z2 > 0:
            count += 1
    return count


def estimate_essential_8pt(correspondences) -> EightPointResult:
    """Recover relative rotation and unit-norm translation from >= 8 matches.

    ``correspondences`` is a sequence of ((x1, y1), (x2, y2)) pairs in
    *normalized camera coordinates* (left view first). The essential matrix is
    estimated with the normalized eight-point algorithm; the four (R, t)
    decompositions are disambiguated by a cheirality vote.
    """
    pts = np.asarray(correspondences, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[1:] != (2, 2):
        raise ValueError("expected an (N, 2, 2) array of point pairs")
    n = pts.shape[0]
    if n < 8:
        raise InsufficientPoints(f"need at least 8 correspondences, got {n}")
    x1, x2 = pts[:, 0, :], pts[:, 1, :]

    x1n, T1 = _normalize_points(x1)
    x2n, T2 = _normalize_points(x2)

    A = np.column_stack([
        x2n[:, 0] * x1n[:, 0], x2n[:, 0] * x1n[:, 1], x2n[:, 0],
        x2n[:, 1] * x1n[:, 0], x2n[:, 1] * x1n[:, 1], x2n[:, 1],
        x1n[:, 0], x1n[:, 1], np.ones(n),
    ])
    _, s, vt = np.linalg.svd(A)
    if s[7] < 1e-8 * s[0]:
        raise DegenerateConfiguration("measurement matrix is rank deficient")
    E = vt[-1].reshape(3, 3)

    u, _, vh = np.linalg.svd(E)
    E = u @ np.diag([1.0, 1.0, 0.0]) @ vh
    E = T2.T @ E @ T1
    E *= math.sqrt(2.0) / np.linalg.norm(E)

    ones = np.ones((n, 1))
    h1 = np.hstack([x1, ones])
    h2 = np.hstack([x2, ones])
    residual = float(np.mean(np.abs(np.einsum("ni,ij,nj->n", h2, E, h1))))

    u, _, vh = np.linalg.svd(E)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vh) < 0:
        vh = -vh
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = u[:, 2]
    best = None
    for R in (u @ W @ vh, u @ W.T @ vh):
        for tc in (t, -t):
            votes = _triangulate_in_front(x1, x2, R, tc)
            if best is None or votes > best[0]:
                best = (votes, R, tc)
    votes, R, tc = best
    if votes == 0:
        raise DegenerateConfiguration("no decomposition places points in front of both cameras")
    return EightPointResult(Extrinsics(R, tc), residual, votes)


# ---------------------------------------------------------------------------
# Calibration file I/O

def _intrinsics_from_dict(d: dict) -> Intrinsics:
    return Intrinsics(
        fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
        k1=float(d.get("k1", 0.0)), k2=float(d.get("k2", 0.0)),
        p1=float(d.get("p1", 0.0)), p2=float(d.get("p2", 0.0)),
        width=int(d["width"]), height=int(d["height"]),
    )


def load_calibration(path) -> CalibrationSet:
    """Load a calibration JSON file (see README for the schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    rotation = np.asarray(doc["rotation"], dtype=np.float64).reshape(3, 3)
    translation = np.asarray(doc["translation_m"], dtype=np.float64)
    return CalibrationSet(
        left=_intrinsics_from_dict(doc["left"]),
        right=_intrinsics_from_dict(doc["right"]),
        stereo=Extrinsics(rotation, translation),
    )


def save_calibration(path, cal: CalibrationSet) -> None:
    def intr_dict(i: Intrinsics) -> dict:
        return {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
                "k1": i.k1, "k2": i.k2, "p1": i.p1, "p2": i.p2,
                "width": i.width, "height": i.height}

    doc = {
        "left": intr_dict(cal.left),
        "right": intr_dict(cal.right),
        "rotation": [float(v) for v in cal.stereo.rotation.reshape(-1)],
        "translation_m": [float(v) for v in cal.stereo.translation],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
