"""Raw planar video container and image-sequence ingestion.

Container layout (little-endian): magic ``MTVF``, u32 version=1, u32 frame
count, u32 height, u32 width, u32 channels, then frame-major float32
samples. Raw camera videos carry pixels in [0, 1]; the same container also
carries DCT coefficient videos whose values are unbounded, so range checks
happen on the ingest path (``validate_pixel_range``) rather than on read.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError

__all__ = [
    "VIDEO_MAGIC",
    "VIDEO_VERSION",
    "write_video",
    "read_video",
    "validate_pixel_range",
    "frames_from_image_dir",
    "write_frame_images",
]

VIDEO_MAGIC = b"MTVF"
VIDEO_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def write_video(path, video):
    arr = np.asarray(video, dtype=np.float64)
    if arr.ndim != 4:
        raise ValidationError(
            f"video must be shaped (frames, height, width, channels), got {arr.shape}"
        )
    if min(arr.shape) < 1:
        raise ValidationError(f"video dimensions must all be >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError("video contains non-finite values")
    n, h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VIDEO_MAGIC, VIDEO_VERSION, n, h, w, c))
        fh.write(arr.astype("<f4").tobytes())


def read_video(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("truncated video header", offset=len(data))
    magic, version, n, h, w, c = _HEADER.unpack_from(data, 0)
    if magic != VIDEO_MAGIC:
        raise FormatError(f"bad video magic {magic!r}", offset=0)
    if version != VIDEO_VERSION:
        raise FormatError(f"unsupported video version {version}", offset=4)
    expected = _HEADER.size + n * h * w * c * 4
    if len(data) < expected:
        raise FormatError(
            f"truncated video payload: expected {expected} bytes, have {len(data)}",
            offset=len(data),
        )
    if len(data) > expected:
        raise FormatError("trailing bytes after video payload", offset=expected)
    samples = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return samples.astype(np.float64).reshape(n, h, w, c)


def validate_pixel_range(video):
    arr = np.asarray(video)
    if not np.isfinite(arr).all():
        raise ValidationError("video contains non-finite pixel values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValidationError(
            f"pixel values outside [0, 1]: min {arr.min():.6g}, max {arr.max():.6g}"
        )


def frames_from_image_dir(path):
    """Load an alphabetically ordered image sequence as a (n, h, w, 3) video."""
    root = Path(path)
    files = sorted(
        p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not files:
        raise ValidationError(f"no image files found in {root}")
    frames = []
    for p in files:
        with Image.open(p) as img:
            frames.append(np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0)
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValidationError(f"image sizes differ across the sequence: {sorted(shapes)}")
    return np.stack(frames)


def write_frame_images(directory, video):
    """Dump each frame of a [0, 1] video as an 8-bit PNG (frame_00000.png, ...)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(video, dtype=np.float64)
    paths = []
    for idx, frame in enumerate(arr):
        quantized = np.clip(frame * 255.0, 0.0, 255.0).round().astype(np.uint8)
        if quantized.shape[2] == 1:
            img = Image.fromarray(quantized[:, :, 0], mode="L")
        else:
            img = Image.fromarray(quantized, mode="RGB")
        p = out / f"frame_{idx:05d}.png"
        img.save(p)
        paths.append(p)
    return paths
