"""Orthonormal DCT-II transforms for frames and videos, plus frame utilities.

Frames are numpy arrays shaped (height, width, channels) with pixel values
in [0, 1]; videos stack frames on a leading axis. The transform is applied
per channel over the full frame (no 8x8 blocking). With the orthonormal
scaling the transform matrix is orthogonal, so the inverse is its transpose
and total energy is preserved up to rounding.

The forward map of ``dct1d`` is, for k = 0..n-1,

    X[k] = s(k) * sum_i x[i] * cos(pi * (2i + 1) * k / (2n)),
    s(0) = sqrt(1/n),  s(k>0) = sqrt(2/n),

evaluated directly as a matrix product against the cosine basis.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import InsufficientFramesError, ShapeError, ValidationError

__all__ = [
    "dct_matrix",
    "dct1d",
    "idct1d",
    "dct2d",
    "idct2d",
    "video_dct",
    "dct_visualize",
    "take_snippet",
    "resize_bilinear",
]


@lru_cache(maxsize=64)
def dct_matrix(n):
    """The n-by-n orthonormal DCT-II basis matrix (rows index frequency)."""
    if n < 1:
        raise ShapeError("dct_matrix requires n >= 1")
    i = np.arange(n)
    k = np.arange(n)[:, None]
    basis = np.cos(np.pi * (2 * i + 1) * k / (2.0 * n))
    basis[0] *= np.sqrt(1.0 / n)
    basis[1:] *= np.sqrt(2.0 / n)
    basis.flags.writeable = False
    return basis


def dct1d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError(f"dct1d expects a non-empty vector, got shape {x.shape}")
    return dct_matrix(x.size) @ x


def idct1d(coefs):
    coefs = np.asarray(coefs, dtype=np.float64)
    if coefs.ndim != 1 or coefs.size == 0:
        raise ShapeError(f"idct1d expects a non-empty vector, got shape {coefs.shape}")
    return dct_matrix(coefs.size).T @ coefs


def _as_planes(frame, op):
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        return f[:, :, None], True
    if f.ndim == 3:
        return f, False
    raise ShapeError(f"{op} expects (h, w) or (h, w, c), got shape {f.shape}")


def dct2d(frame):
    """Separable 2-D transform: rows then columns, independently per channel."""
    f, squeeze = _as_planes(frame, "dct2d")
    h, w, c = f.shape
    ch, cw = dct_matrix(h), dct_matrix(w)
    out = np.empty_like(f)
    for ci in range(c):
        out[:, :, ci] = ch @ f[:, :, ci] @ cw.T
    return out[:, :, 0] if squeeze else out


def idct2d(coefs):
    f, squeeze = _as_planes(coefs, "idct2d")
    h, w, c = f.shape
    ch, cw = dct_matrix(h), dct_matrix(w)
    out = np.empty_like(f)
    for ci in range(c):
        out[:, :, ci] = ch.T @ f[:, :, ci] @ cw
    return out[:, :, 0] if squeeze else out


def video_dct(video):
    """Per-frame ``dct2d`` over a (frames, h, w, c) stack; order preserved."""
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4:
        raise ShapeError(f"video_dct expects (frames, h, w, c), got shape {v.shape}")
    return np.stack([dct2d(frame) for frame in v])


def dct_visualize(coefs):
    """Log-magnitude map ln(1 + |coef|), min-max scaled to [0, 1] per channel.

    Channels with no dynamic range (all-zero or any constant magnitude) map
    to zeros so the output always stays within [0, 1].
    """
    f, squeeze = _as_planes(coefs, "dct_visualize")
    mag = np.log1p(np.abs(f))
    out = np.zeros_like(mag)
    for ci in range(f.shape[2]):
        lo = mag[:, :, ci].min()
        hi = mag[:, :, ci].max()
        if hi > lo:
            out[:, :, ci] = (mag[:, :, ci] - lo) / (hi - lo)
    return out[:, :, 0] if squeeze else out


def take_snippet(frames, target_len=64):
    """Centered contiguous window of ``target_len`` frames.

    Clips shorter than ``target_len`` are rejected with
    ``InsufficientFramesError`` carrying both counts.
    """
    if target_len < 1:
        raise ValidationError("take_snippet target_len must be >= 1")
    v = np.asarray(frames, dtype=np.float64)
    if v.ndim != 4:
        raise ShapeError(f"take_snippet expects (frames, h, w, c), got shape {v.shape}")
    n = v.shape[0]
    if n < target_len:
        raise InsufficientFramesError(n, target_len)
    start = (n - target_len) // 2
    return v[start : start + target_len]


def resize_bilinear(frame, out_h, out_w):
    """Bilinear resize with half-pixel sample centers (align-corners off)."""
    if out_h < 1 or out_w < 1:
        raise ValidationError("resize_bilinear target size must be >= 1")
    f, squeeze = _as_planes(frame, "resize_bilinear")
    in_h, in_w = f.shape[:2]

    def _axis(out_n, in_n):
        src = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
        src = np.clip(src, 0.0, in_n - 1.0)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, in_n - 1)
        return lo, hi, src - lo

    y0, y1, wy = _axis(out_h, in_h)
    x0, x1, wx = _axis(out_w, in_w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = (1.0 - wx) * f[np.ix_(y0, x0)] + wx * f[np.ix_(y0, x1)]
    bottom = (1.0 - wx) * f[np.ix_(y1, x0)] + wx * f[np.ix_(y1, x1)]
    out = (1.0 - wy) * top + wy * bottom
    return out[:, :, 0] if squeeze else out
