"""Deterministic image deformation operators.

All operators are pure functions of (image, parameters). Images are
channel-planar float32 arrays of shape (C, H, W); outputs keep the input
shape. Geometric operators use inverse mapping with bilinear interpolation
and fill out-of-bounds reads with background value 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d

IDENTITY_H = np.eye(3, dtype=np.float64)


def _bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample img (C,H,W) at float source coords sx, sy (each H x W)."""
    c, h, w = img.shape
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0).astype(img.dtype)
    fy = (sy - y0).astype(img.dtype)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y1, 0, h - 1)
    vx0 = (x0 >= 0) & (x0 < w)
    vx1 = (x1 >= 0) & (x1 < w)
    vy0 = (y0 >= 0) & (y0 < h)
    vy1 = (y1 >= 0) & (y1 < h)
    g00 = np.where(vy0 & vx0, img[:, y0c, x0c], 0)
    g01 = np.where(vy0 & vx1, img[:, y0c, x1c], 0)
    g10 = np.where(vy1 & vx0, img[:, y1c, x0c], 0)
    g11 = np.where(vy1 & vx1, img[:, y1c, x1c], 0)
    top = g00 * (1 - fx) + g01 * fx
    bot = g10 * (1 - fx) + g11 * fx
    return (top * (1 - fy) + bot * fy).astype(img.dtype)


@lru_cache(maxsize=8)
def _norm_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized [-1,1] coordinates of pixel centers, image-centered."""
    xn = (2.0 * np.arange(w) - (w - 1)) / (w - 1)
    yn = (2.0 * np.arange(h) - (h - 1)) / (h - 1)
    xg, yg = np.meshgrid(xn, yn)
    xg.setflags(write=False)
    yg.setflags(write=False)
    return xg, yg


@lru_cache(maxsize=8)
def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-coordinate meshgrid, read-only and shared between callers."""
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    xg.setflags(write=False)
    yg.setflags(write=False)
    return xg, yg


def warp_homography(img: np.ndarray, h_mat: np.ndarray) -> np.ndarray:
    """Projective warp over normalized [-1,1]^2 coordinates.

    The matrix maps output coordinates to source coordinates (inverse
    mapping), so a diagonal of 2 shrinks content about the center by 2.
    """
    h_mat = np.asarray(h_mat, dtype=np.float64)
    if h_mat.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {h_mat.shape}")
    if abs(np.linalg.det(h_mat)) <= 1e-8:
        raise ValueError("homography is singular or near-singular")
    _, h, w = img.shape
    xg, yg = _norm_grid(h, w)
    denom = h_mat[2, 0] * xg + h_mat[2, 1] * yg + h_mat[2, 2]
    sxn = (h_mat[0, 0] * xg + h_mat[0, 1] * yg + h_mat[0, 2]) / denom
    syn = (h_mat[1, 0] * xg + h_mat[1, 1] * yg + h_mat[1, 2]) / denom
    sx = (sxn + 1) * (w - 1) / 2
    sy = (syn + 1) * (h - 1) / 2
    return _bilinear_sample(img, sx, sy)


@lru_cache(maxsize=16)
def _gaussian_kernel_cached(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = int(np.ceil(3.0 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    k.setflags(write=False)
    return k


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian truncated at radius ceil(3*sigma), normalized to sum 1."""
    return _gaussian_kernel_cached(float(sigma)).copy()


def smooth_field(raw: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with zero padding, per leading plane."""
    k = _gaussian_kernel_cached(float(sigma))
    out = correlate1d(raw.astype(np.float64), k, axis=-1, mode="constant", cval=0.0)
    return correlate1d(out, k, axis=-2, mode="constant", cval=0.0)


def elastic_distort(img: np.ndarray, raw_field: np.ndarray,
                    sigma: float, alpha: float) -> np.ndarray:
    """Simard-style elastic distortion.

    raw_field is (2, H, W) uniform noise in [-1, 1] (dx plane, dy plane);
    it is Gaussian-smoothed, scaled by alpha to pixel displacements, and the
    output samples the input at (x + dx, y + dy).
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    _, h, w = img.shape
    if raw_field.shape != (2, h, w):
        raise ValueError(f"raw field shape {raw_field.shape} != (2, {h}, {w})")
    if alpha == 0:
        return img.copy()
    field = alpha * smooth_field(raw_field, sigma)
    xg, yg = _pixel_grid(h, w)
    return _bilinear_sample(img, xg + field[0], yg + field[1])


def morph(img: np.ndarray, mode: str) -> np.ndarray:
    """Grayscale dilation/erosion with a 3x3 square structuring element.

    Windows are clamped at the image border (edge pixels use the in-image
    part of their window only).
    """
    if mode == "none":
        return img.copy()
    if mode not in ("dilate", "erode"):
        raise ValueError(f"unknown morphology mode {mode!r}")
    if img.shape[0] != 1:
        raise ValueError("morphology is defined for single-channel images only")
    padded = np.pad(img[0], 1, mode="edge")
    stack = np.stack([padded[dy:dy + img.shape[1], dx:dx + img.shape[2]]
                      for dy in range(3) for dx in range(3)])
    reduced = stack.max(axis=0) if mode == "dilate" else stack.min(axis=0)
    return reduced[None].astype(img.dtype)


def scale_crop(img: np.ndarray, s: float, ox: float, oy: float) -> np.ndarray:
    """Magnify by factor s: output (x, y) samples source at (ox + x/s, oy + y/s).

    (ox, oy) is the top-left corner of the magnified patch in source pixels;
    valid range is [0, S*(1 - 1/s)] per axis.
    """
    if s < 1:
        raise ValueError("scale factor must be >= 1")
    _, h, w = img.shape
    max_ox, max_oy = w * (1 - 1 / s), h * (1 - 1 / s)
    if not (0 <= ox <= max_ox + 1e-9) or not (0 <= oy <= max_oy + 1e-9):
        raise ValueError(f"offsets ({ox}, {oy}) outside valid range "
                         f"[0, {max_ox:.3f}] x [0, {max_oy:.3f}] for s={s}")
    if s == 1 and ox == 0 and oy == 0:
        return img.copy()
    xg, yg = _pixel_grid(h, w)
    return _bilinear_sample(img, ox + xg / s, oy + yg / s)


def hflip(img: np.ndarray) -> np.ndarray:
    """Reverse column order per channel."""
    return np.ascontiguousarray(img[:, :, ::-1])


# ---------------------------------------------------------------------------
# ZCA whitening

ZCA_MAGIC = b"APACZCA1"


@dataclass
class ZcaTransform:
    mean: np.ndarray        # (d,)
    matrix: np.ndarray      # (d, d), symmetric
    epsilon: float

    def save(self, path) -> None:
        d = self.mean.shape[0]
        with open(path, "wb") as f:
            f.write(ZCA_MAGIC)
            f.write(struct.pack("<Id", d, self.epsilon))
            f.write(np.ascontiguousarray(self.mean, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ZcaTransform":
        with open(path, "rb") as f:
            if f.read(8) != ZCA_MAGIC:
                raise ValueError("bad ZCA sidecar magic")
            d, eps = struct.unpack("<Id", f.read(12))
            mean = np.frombuffer(f.read(8 * d), dtype="<f8").copy()
            mat = np.frombuffer(f.read(8 * d * d), dtype="<f8").reshape(d, d).copy()
        return cls(mean=mean, matrix=mat, epsilon=eps)


def zca_fit(x: np.ndarray, epsilon: float | None = None) -> ZcaTransform:
    """Fit ZCA whitening U (L + eps I)^{-1/2} U^T on row-vector samples x (n, d).

    Default epsilon is scale-invariant: 1e-5 * trace(cov) / d.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("zca_fit requires finite input")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    if epsilon is None:
        epsilon = 1e-5 * np.trace(cov) / cov.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    scale = 1.0 / np.sqrt(np.maximum(evals, 0) + epsilon)
    matrix = (evecs * scale) @ evecs.T
    return ZcaTransform(mean=mean, matrix=matrix, epsilon=float(epsilon))


def zca_apply(t: ZcaTransform, img: np.ndarray) -> np.ndarray:
    """Whiten one image: reshape to a flat vector, apply W (x - mu), reshape back."""
    flat = img.reshape(-1).astype(np.float64)
    if flat.shape[0] != t.mean.shape[0]:
        raise ValueError(f"image has {flat.shape[0]} values, transform expects {t.mean.shape[0]}")
    out = t.matrix @ (flat - t.mean)
    return out.reshape(img.shape).astype(img.dtype)
