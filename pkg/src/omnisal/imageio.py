"""PNG/PGM reading and writing for (C, H, W) rasters in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import DTYPE, as_tensor


def read_image(path, channels: int | None = None) -> np.ndarray:
    """Load an 8-bit PNG/PGM as a float32 (C, H, W) array scaled to [0, 1].

    ``channels`` forces 1 (grayscale) or 3 (RGB); by default grayscale files
    stay single-channel and everything else becomes RGB.
    """
    with Image.open(path) as img:
        if channels is None:
            channels = 1 if img.mode in ("L", "1", "I", "I;16", "F") else 3
        img = img.convert("L" if channels == 1 else "RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr, dtype=DTYPE)


def to_uint8(x) -> np.ndarray:
    x = as_tensor(x)
    return np.round(np.clip(x.astype(np.float64), 0, 1) * 255).astype(np.uint8)


def write_image(path, x) -> None:
    """Write a 1- or 3-channel raster; the format follows the file suffix."""
    q = to_uint8(x)
    if q.shape[0] == 1:
        img = Image.fromarray(q[0], mode="L")
    elif q.shape[0] == 3:
        img = Image.fromarray(q.transpose(1, 2, 0), mode="RGB")
    else:
        raise ValueError(f"can only write 1- or 3-channel images, got {q.shape[0]}")
    suffix = Path(path).suffix.lower()
    img.save(path, format="PPM" if suffix in (".pgm", ".ppm") else "PNG")


def write_mask(path, mask) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, mode="L").save(path, format="PNG")
