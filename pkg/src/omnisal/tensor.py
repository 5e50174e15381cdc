"""Dense (C, H, W) feature kernel.

Tensors are plain ``float32`` numpy arrays of shape ``(C, H, W)``.  Every
function here returns a fresh array and never mutates its inputs, so results
can be shared freely between threads.  Reductions (convolution, pooling, fully
connected layers) accumulate in float64 and round once on output.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DTYPE = np.float32
OMT_MAGIC = b"OMT1"

# Sigmoid is clipped into the open interval so gates never saturate to 0 or 1.
_SIG_LO = float(np.finfo(np.float32).tiny)
_SIG_HI = 1.0 - 2.0**-24


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


def as_tensor(x) -> np.ndarray:
    """Validate and return ``x`` as a float32 (C, H, W) array."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {arr.shape}")
    return arr


def _finish(out: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(out, dtype=DTYPE)


@dataclass(frozen=True)
class ConvParams:
    """3x3 convolution weights: ``kernel`` is (C_out, C_in, 3, 3)."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (3, 3):
            raise ShapeError(f"conv kernel must be (C_out, C_in, 3, 3), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(f"conv bias must have length {self.kernel.shape[0]}")

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1]

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, c_in: int, c_out: int, gain: float = 1.0) -> "ConvParams":
        """Uniform(-k, k) weights with ``k = gain/sqrt(fan_in)``."""
        k = gain / np.sqrt(c_in * 9)
        kernel = rng.uniform(-k, k, size=(c_out, c_in, 3, 3)).astype(DTYPE)
        bias = rng.uniform(-k, k, size=c_out).astype(DTYPE)
        return cls(kernel, bias)

    @classmethod
    def identity(cls, channels: int) -> "ConvParams":
        kernel = np.zeros((channels, channels, 3, 3), dtype=DTYPE)
        kernel[np.arange(channels), np.arange(channels), 1, 1] = 1.0
        return cls(kernel, np.zeros(channels, dtype=DTYPE))

    @classmethod
    def constant(cls, c_in: int, c_out: int, value: float) -> "ConvParams":
        """Zero kernel whose output is ``value`` everywhere."""
        return cls(np.zeros((c_out, c_in, 3, 3), dtype=DTYPE), np.full(c_out, value, dtype=DTYPE))


def se_hidden(channels: int, reduction: int = 16) -> int:
    """Bottleneck width of an SE block; the ratio is clamped to ``channels``."""
    if reduction < 1:
        raise ValueError("SE reduction ratio must be a positive integer")
    r = min(reduction, channels)
    if channels % r:
        raise ShapeError(f"SE channels {channels} not divisible by reduction {r}")
    return channels // r


@dataclass(frozen=True)
class SEParams:
    """Squeeze-and-Excitation weights: ``w1`` (C/r, C), ``w2`` (C, C/r)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        hidden, c = self.w1.shape
        if self.w2.shape != (c, hidden) or self.b1.shape != (hidden,) or self.b2.shape != (c,):
            raise ShapeError("inconsistent SE parameter shapes")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, reduction: int = 16) -> "SEParams":
        hidden = se_hidden(channels, reduction)
        k1 = 1.0 / np.sqrt(channels)
        k2 = 1.0 / np.sqrt(hidden)
        w1 = rng.uniform(-k1, k1, size=(hidden, channels)).astype(DTYPE)
        b1 = rng.uniform(-k1, k1, size=hidden).astype(DTYPE)
        w2 = rng.uniform(-k2, k2, size=(channels, hidden)).astype(DTYPE)
        b2 = rng.uniform(-k2, k2, size=channels).astype(DTYPE)
        return cls(w1, b1, w2, b2)

    @classmethod
    def zeros(cls, channels: int, reduction: int = 16) -> "SEParams":
        hidden = se_hidden(channels, reduction)
        return cls(
            np.zeros((hidden, channels), dtype=DTYPE),
            np.zeros(hidden, dtype=DTYPE),
            np.zeros((channels, hidden), dtype=DTYPE),
            np.zeros(channels, dtype=DTYPE),
        )


# ---------------------------------------------------------------------------
# elementwise family


def _broadcastable(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    if a.shape[1:] == b.shape[1:] and (a.shape[0] == 1 or b.shape[0] == 1):
        return
    raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _broadcastable(a, b)
    return _finish(a.astype(np.float64) + b)


def sub(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _broadcastable(a, b)
    return _finish(a.astype(np.float64) - b)


def hadamard(a, b) -> np.ndarray:
    """Elementwise product; a single-channel operand broadcasts over channels."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcastable(a, b)
    return _finish(a.astype(np.float64) * b)


def scale(x, s: float) -> np.ndarray:
    return _finish(as_tensor(x).astype(np.float64) * float(s))


def relu(x) -> np.ndarray:
    return _finish(np.maximum(as_tensor(x), 0))


def _sigmoid64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _SIG_LO, _SIG_HI)


def sigmoid(x) -> np.ndarray:
    """Logistic function, clipped so every output lies strictly inside (0, 1)."""
    return _finish(_sigmoid64(as_tensor(x)))


def sigmoid_vec(v) -> np.ndarray:
    return _sigmoid64(v).astype(DTYPE)


# ---------------------------------------------------------------------------
# channel plumbing


def concat_channels(xs: Sequence) -> np.ndarray:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    spatial = xs[0].shape[1:]
    for x in xs[1:]:
        if x.shape[1:] != spatial:
            raise ShapeError(f"spatial mismatch in concat: {x.shape[1:]} vs {spatial}")
    return _finish(np.concatenate(xs, axis=0))


def split_channels(x, parts: int) -> list[np.ndarray]:
    x = as_tensor(x)
    if parts < 1 or x.shape[0] % parts:
        raise ShapeError(f"cannot split {x.shape[0]} channels into {parts} parts")
    return [_finish(p) for p in np.split(x, parts, axis=0)]


# ---------------------------------------------------------------------------
# reductions and linear maps


def conv3x3(x, p: ConvParams) -> np.ndarray:
    """Zero-padded 3x3 cross-correlation (no kernel flip), stride 1."""
    x = as_tensor(x)
    c, h, w = x.shape
    if c != p.c_in:
        raise ShapeError(f"conv expects {p.c_in} input channels, got {c}")
    padded = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    padded[:, 1:-1, 1:-1] = x
    # columns ordered (c, dy, dx) to match kernel.reshape(C_out, C_in * 9)
    cols = np.empty((c, 9, h, w), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy * 3 + dx] = padded[:, dy : dy + h, dx : dx + w]
    k = p.kernel.reshape(p.c_out, c * 9).astype(np.float64)
    out = k @ cols.reshape(c * 9, h * w)
    out += p.bias.astype(np.float64)[:, None]
    return _finish(out.reshape(p.c_out, h, w))


def global_avg_pool(x) -> np.ndarray:
    x = as_tensor(x)
    return x.astype(np.float64).mean(axis=(1, 2)).astype(DTYPE)


def fully_connected(v, w, b) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if v.ndim != 1 or w.ndim != 2 or w.shape[1] != v.shape[0] or b.shape != (w.shape[0],):
        raise ShapeError(f"fully_connected: W {w.shape}, v {v.shape}, b {b.shape}")
    return (w @ v + b).astype(DTYPE)


def se_gate(x, p: SEParams) -> np.ndarray:
    """Per-channel SE gate ``sigmoid(W2 relu(W1 GAP(x) + b1) + b2)``, in (0, 1)."""
    x = as_tensor(x)
    if x.shape[0] != p.channels:
        raise ShapeError(f"SE expects {p.channels} channels, got {x.shape[0]}")
    squeezed = global_avg_pool(x)
    hidden = np.maximum(fully_connected(squeezed, p.w1, p.b1), 0)
    return sigmoid_vec(fully_connected(hidden, p.w2, p.b2).astype(np.float64))


def se_block(x, p: SEParams) -> np.ndarray:
    x = as_tensor(x)
    s = se_gate(x, p)
    return _finish(x.astype(np.float64) * s.astype(np.float64)[:, None, None])


def avg_pool2(x) -> np.ndarray:
    """2x2 average pooling with stride 2."""
    x = as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {(h, w)}")
    blocks = x.astype(np.float64).reshape(c, h // 2, 2, w // 2, 2)
    return _finish(blocks.mean(axis=(2, 4)))


# ---------------------------------------------------------------------------
# resampling


def _axis_taps(n_in: int, n_out: int):
    # align_corners=False: src = (dst + 0.5) * n_in / n_out - 0.5, clamped below at 0
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def bilinear_resize(x, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with the align_corners=False convention."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError("output dims must be positive")
    _, h, w = x.shape
    y0, y1, fy = _axis_taps(h, out_h)
    x0, x1, fx = _axis_taps(w, out_w)
    src = x.astype(np.float64)
    rows = src[:, y0, :] * (1 - fy)[None, :, None] + src[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx
    return _finish(out)


def bilinear_upsample(x, factor: int) -> np.ndarray:
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsampling factor must be an integer >= 1, got {factor}")
    x = as_tensor(x)
    if factor == 1:
        return x.copy()
    return bilinear_resize(x, x.shape[1] * factor, x.shape[2] * factor)


# ---------------------------------------------------------------------------
# OMT1 fixture format


def write_omt(path, x) -> None:
    """Write ``x`` as ``OMT1`` + uint32 (C, H, W) + float32 data, little-endian."""
    x = as_tensor(x)
    c, h, w = x.shape
    with open(path, "wb") as fh:
        fh.write(OMT_MAGIC)
        fh.write(struct.pack("<3I", c, h, w))
        fh.write(x.astype("<f4").tobytes(order="C"))


def read_omt(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != OMT_MAGIC:
        raise ValueError(f"{path}: not an OMT1 file")
    c, h, w = struct.unpack_from("<3I", raw, 4)
    n = c * h * w
    body = raw[16:]
    if len(body) != 4 * n:
        raise ValueError(f"{path}: expected {n} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(DTYPE)
