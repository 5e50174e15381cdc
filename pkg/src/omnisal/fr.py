"""Filtration and Refinement of decoder features with five encoder sources.

One level runs, in order: decoder enhancement by modulation, per-source
filtration masks, aggregation of the filtered encoder features, detail-mask
refinement of the decoder, and the final fusion convolution.  Sources are
keyed ``C1``..``C4`` (cube unfoldings) and ``E`` (equirectangular); the sum
over sources always runs in that order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DTYPE, ConvParams, ShapeError

SOURCES = ("C1", "C2", "C3", "C4", "E")


@dataclass(frozen=True)
class FRParams:
    reduce: ConvParams  # decoder channels -> width
    mod_a: ConvParams
    mod_b: ConvParams
    fm_heads: dict  # source -> ConvParams (width -> width)
    enc_convs: dict  # source -> ConvParams (encoder channels -> width)
    aggregate: ConvParams
    detail: ConvParams
    fuse: ConvParams  # 2 * width -> out channels
    seed: int | None = None

    @property
    def width(self) -> int:
        return self.reduce.c_out

    @property
    def shared_fm_head(self) -> bool:
        heads = list(self.fm_heads.values())
        return all(h is heads[0] for h in heads)


@dataclass(frozen=True)
class FRLevelInputs:
    decoder: np.ndarray  # F_d^{k+1}, half the encoder resolution
    encoders: dict = field(default_factory=dict)  # source -> F_j^k

    def __post_init__(self):
        if not self.encoders:
            raise ShapeError("FR level needs at least one encoder source")
        unknown = set(self.encoders) - set(SOURCES)
        if unknown:
            raise ShapeError(f"unknown FR sources: {sorted(unknown)}")
        shapes = {T.as_tensor(x).shape for x in self.encoders.values()}
        if len(shapes) != 1:
            raise ShapeError(f"encoder features differ in shape: {shapes}")
        (c, h, w), = shapes
        dec = T.as_tensor(self.decoder)
        if (2 * dec.shape[1], 2 * dec.shape[2]) != (h, w):
            raise ShapeError(f"decoder {dec.shape} is not half of encoder {(h, w)}")

    def ordered(self):
        return [(j, self.encoders[j]) for j in SOURCES if j in self.encoders]


def make_fr_params(dec_channels: int, enc_channels: int, width: int, out_channels: int,
                   seed: int, shared_fm_head: bool = False, gain: float = 1.0) -> FRParams:
    """Seeded uniform(-k, k) convs, ``k = gain/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)

    def conv(c_in, c_out):
        return ConvParams.init(rng, c_in, c_out, gain)

    reduce = conv(dec_channels, width)
    mod_a = conv(width, width)
    mod_b = conv(width, width)
    if shared_fm_head:
        head = conv(width, width)
        fm_heads = {j: head for j in SOURCES}
    else:
        fm_heads = {j: conv(width, width) for j in SOURCES}
    enc_convs = {j: conv(enc_channels, width) for j in SOURCES}
    aggregate = conv(width, width)
    detail = conv(width, width)
    fuse = conv(2 * width, out_channels)
    return FRParams(reduce, mod_a, mod_b, fm_heads, enc_convs, aggregate, detail, fuse, seed)


def _mask(x: np.ndarray, sigmoid_mask: bool) -> np.ndarray:
    return T.sigmoid(x) if sigmoid_mask else x


def enhance_decoder(f_d, p: FRParams) -> np.ndarray:
    """``relu(a * reduce(F_d) + b)`` with ``a, b`` convolved from the reduced features."""
    reduced = T.conv3x3(f_d, p.reduce)
    a = T.conv3x3(reduced, p.mod_a)
    b = T.conv3x3(reduced, p.mod_b)
    return T.relu(T.add(T.hadamard(a, reduced), b))


def filtration_mask(f_de, p: FRParams, source: str, sigmoid_mask: bool = False) -> np.ndarray:
    return _mask(T.conv3x3(f_de, p.fm_heads[source]), sigmoid_mask)


def filter_encoder(f_j, f_de, p: FRParams, source: str, sigmoid_mask: bool = False) -> np.ndarray:
    """``UP(FM_j) * conv(F_j)`` where ``FM_j`` comes from the enhanced decoder."""
    fm = filtration_mask(f_de, p, source, sigmoid_mask)
    enc = T.conv3x3(f_j, p.enc_convs[source])
    up = T.bilinear_upsample(fm, 2)
    if up.shape != enc.shape:
        raise ShapeError(f"upsampled mask {up.shape} does not match encoder {enc.shape}")
    return T.hadamard(up, enc)


def aggregate_encoders(filtered, p: FRParams) -> np.ndarray:
    """``relu(conv(sum_j F_ej))``; ``filtered`` is ordered C1..C4, E (missing sources skipped)."""
    filtered = list(filtered)
    if not filtered or len(filtered) > len(SOURCES):
        raise ShapeError(f"expected 1..5 filtered encoder features, got {len(filtered)}")
    acc = T.as_tensor(filtered[0]).astype(np.float64)
    for f in filtered[1:]:
        f = T.as_tensor(f)
        if f.shape != acc.shape:
            raise ShapeError("filtered encoder features differ in shape")
        acc = acc + f
    return T.relu(T.conv3x3(acc.astype(DTYPE), p.aggregate))


def refine_decoder(f_de, f_e, p: FRParams, sigmoid_mask: bool = False) -> np.ndarray:
    """``DM * UP(F_de)`` with the detail mask ``DM`` convolved from ``F_e``."""
    dm = _mask(T.conv3x3(f_e, p.detail), sigmoid_mask)
    return T.hadamard(dm, T.bilinear_upsample(f_de, 2))


def fr_fuse(f_e, f_dr, p: FRParams) -> np.ndarray:
    return T.relu(T.conv3x3(T.concat_channels([f_e, f_dr]), p.fuse))


def fr_module(inputs: FRLevelInputs, p: FRParams, sigmoid_mask: bool = False,
              return_details: bool = False):
    f_de = enhance_decoder(inputs.decoder, p)
    filtered = [filter_encoder(f_j, f_de, p, j, sigmoid_mask) for j, f_j in inputs.ordered()]
    f_e = aggregate_encoders(filtered, p)
    f_dr = refine_decoder(f_de, f_e, p, sigmoid_mask)
    out = fr_fuse(f_e, f_dr, p)
    if return_details:
        return out, {"enhanced": f_de, "filtered": filtered, "encoder": f_e, "refined": f_dr}
    return out


def concat_fusion(inputs: FRLevelInputs, conv: ConvParams) -> np.ndarray:
    """Ablation stand-in: ``relu(conv([UP(F_d), F_C1..F_C4, F_E]))``."""
    parts = [T.bilinear_upsample(inputs.decoder, 2)] + [f for _, f in inputs.ordered()]
    return T.relu(T.conv3x3(T.concat_channels(parts), conv))
