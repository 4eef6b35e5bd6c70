"""Dense 2D raster types (grayscale frames, disparity, depth, flow) and their file formats.

All rasters pair a float array with a boolean validity mask. On disk the
convention is a PFM-compatible layout: 32-bit floats, NaN marks invalid
pixels, rows stored bottom to top. Flow fields use the 3-channel variant
with channels (m_x, m_y, 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatch

__all__ = [
    "GrayImage",
    "DisparityMap",
    "DepthMap",
    "FlowField",
    "bilinear_sample",
    "resize_bilinear",
    "read_pfm",
    "write_pfm",
    "load_image",
    "save_gray_png",
    "save_disparity_png",
]

_WEIGHT_EPS = 1e-12


def _as_mask(valid, shape) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(valid, dtype=bool)
    if mask.shape != shape:
        raise DimensionMismatch(f"mask shape {mask.shape} != data shape {shape}")
    return mask


@dataclass
class GrayImage:
    """Single-channel intensity raster with values in [0, 1] where valid."""

    pixels: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise DimensionMismatch("GrayImage expects a 2D array")
        self.valid = _as_mask(self.valid, self.pixels.shape)
        vals = self.pixels[self.valid]
        if vals.size and (not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0):
            raise ValueError("valid intensities must be finite and in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class DisparityMap:
    """Sub-pixel horizontal offsets between rectified left/right views."""

    disparities: np.ndarray
    valid: np.ndarray = None
    max_disparity: float = None

    def __post_init__(self):
        self.disparities = np.asarray(self.disparities, dtype=np.float64)
        if self.disparities.ndim != 2:
            raise DimensionMismatch("DisparityMap expects a 2D array")
        self.valid = _as_mask(self.valid, self.disparities.shape)
        vals = self.disparities[self.valid]
        if self.max_disparity is None:
            self.max_disparity = float(vals.max()) if vals.size else 0.0
        if vals.size and (not np.all(np.isfinite(vals)) or vals.min() < -1e-9
                          or vals.max() > self.max_disparity + 1e-9):
            raise ValueError("valid disparities must lie in [0, max_disparity]")

    @property
    def height(self) -> int:
        return self.disparities.shape[0]

    @property
    def width(self) -> int:
        return self.disparities.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.disparities.shape


@dataclass
class DepthMap:
    """Metric depth per pixel, in meters."""

    depths: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        if self.depths.ndim != 2:
            raise DimensionMismatch("DepthMap expects a 2D array")
        self.valid = _as_mask(self.valid, self.depths.shape)
        vals = self.depths[self.valid]
        if vals.size and (not np.all(np.isfinite(vals)) or vals.min() <= 0.0):
            raise ValueError("valid depths must be finite and positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depths.shape


@dataclass
class FlowField:
    """Per-pixel (m_x, m_y) displacement between consecutive frames."""

    vectors: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise DimensionMismatch("FlowField expects an (H, W, 2) array")
        self.valid = _as_mask(self.valid, self.vectors.shape[:2])
        vals = self.vectors[self.valid]
        if vals.size and not np.all(np.isfinite(vals)):
            raise ValueError("valid flow vectors must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def mx(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def my(self) -> np.ndarray:
        return self.vectors[..., 1]


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                    valid: np.ndarray = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``data`` at float coordinates with bilinear interpolation.

    Returns (values, ok). A sample is ok iff it lies inside the raster and
    every source pixel contributing nonzero weight is valid.
    """
    h, w = data.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    mask = _as_mask(valid, data.shape)
    safe = np.where(mask, data, 0.0)

    inb = (xs >= 0.0) & (xs <= w - 1) & (ys >= 0.0) & (ys <= h - 1)
    x0 = np.clip(np.floor(xs), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, max(h - 2, 0)).astype(np.intp)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    vals = (w00 * safe[y0, x0] + w10 * safe[y0, x1]
            + w01 * safe[y1, x0] + w11 * safe[y1, x1])

    ok = inb.copy()
    for wgt, yy, xx in ((w00, y0, x0), (w10, y0, x1), (w01, y1, x0), (w11, y1, x1)):
        ok &= mask[yy, xx] | (wgt <= _WEIGHT_EPS)
    return vals, ok


def resize_bilinear(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resize a 2D array to ``shape`` with align-corners bilinear interpolation."""
    h, w = arr.shape
    oh, ow = shape
    ys = np.linspace(0.0, h - 1, oh) if oh > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, ow) if ow > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    vals, _ = bilinear_sample(arr, gx, gy)
    return vals


# ---------------------------------------------------------------------------
# PFM-compatible serialization (float32, NaN = invalid, rows bottom to top)

def write_pfm(path, data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float array as PFM (little endian)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        magic = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
    else:
        raise DimensionMismatch("PFM supports (H, W) or (H, W, 3) arrays")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file written by :func:`write_pfm` (or any standard PFM)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ValueError(f"not a PFM file: {path}")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        count = w * h * (3 if magic == b"PF" else 1)
        raw = np.frombuffer(fh.read(count * 4), dtype="<f4" if scale < 0 else ">f4")
    if raw.size != count:
        raise ValueError(f"truncated PFM file: {path}")
    shape = (h, w, 3) if magic == b"PF" else (h, w)
    return np.flipud(raw.reshape(shape)).astype(np.float64)


def gray_to_pfm(path, img: GrayImage) -> None:
    write_pfm(path, np.where(img.valid, img.pixels, np.nan))


def gray_from_pfm(path) -> GrayImage:
    data = read_pfm(path)
    valid = np.isfinite(data)
    return GrayImage(np.clip(np.where(valid, data, 0.0), 0.0, 1.0), valid)


def disparity_to_pfm(path, disp: DisparityMap) -> None:
    write_pfm(path, np.where(disp.valid, disp.disparities, np.nan))


def disparity_from_pfm(path, max_disparity: float = None) -> DisparityMap:
    data = read_pfm(path)
    valid = np.isfinite(data)
    return DisparityMap(np.where(valid, data, 0.0), valid, max_disparity)


def depth_to_pfm(path, depth: DepthMap) -> None:
    write_pfm(path, np.where(depth.valid, depth.depths, np.nan))


def depth_from_pfm(path) -> DepthMap:
    data = read_pfm(path)
    valid = np.isfinite(data) & (data > 0.0)
    return DepthMap(np.where(valid, data, 1.0), valid)


def flow_to_pfm(path, flow: FlowField) -> None:
    h, w = flow.shape
    data = np.zeros((h, w, 3), dtype=np.float64)
    data[..., 0] = np.where(flow.valid, flow.mx, np.nan)
    data[..., 1] = np.where(flow.valid, flow.my, np.nan)
    write_pfm(path, data)


def flow_from_pfm(path) -> FlowField:
    data = read_pfm(path)
    if data.ndim != 3:
        raise DimensionMismatch("flow PFM must have 3 channels")
    valid = np.isfinite(data[..., 0]) & np.isfinite(data[..., 1])
    vectors = np.where(valid[..., None], data[..., :2], 0.0)
    return FlowField(vectors, valid)


# ---------------------------------------------------------------------------
# PNG / PGM ingestion and visualization exports

def load_image(path) -> np.ndarray:
    """Load an 8/16-bit PNG or PGM as float64 in [0, 1]; (H, W) or (H, W, 3)."""
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("RGBA", "P"):
            im = im.convert("RGB")
            mode = "RGB"
        arr = np.asarray(im)
    if mode in ("I;16", "I;16B", "I"):
        return arr.astype(np.float64) / 65535.0
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode == "RGB":
        return arr.astype(np.float64) / 255.0
    raise ValueError(f"unsupported image mode {mode!r} for {path}")


def save_gray_png(path, img: GrayImage, bit_depth: int = 16) -> None:
    """Save a GrayImage as 8- or 16-bit grayscale PNG (invalid pixels as 0)."""
    data = np.where(img.valid, img.pixels, 0.0)
    if bit_depth == 16:
        arr = np.round(data * 65535.0).astype("<u2")
        Image.fromarray(arr, mode="I;16").save(path)
    elif bit_depth == 8:
        arr = np.round(data * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)
    else:
        raise ValueError("bit_depth must be 8 or 16")


def save_disparity_png(path, disp: DisparityMap) -> None:
    """16-bit PNG visualization, disparity scaled by 256, invalid pixels 0."""
    scaled = np.round(np.where(disp.valid, disp.disparities, 0.0) * 256.0)
    arr = np.clip(scaled, 0, 65535).astype("<u2")
    Image.fromarray(arr, mode="I;16").save(path)
