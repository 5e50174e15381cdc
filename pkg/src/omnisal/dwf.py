"""Dynamic Weighting Fusion of one equirectangular and four cube-unfolding features.

Gated inter fusion (GEF) blends each unfolding's feature with the
equirectangular one through a learned importance map; weighted intra fusion
(WAF) turns an SE gate over all four unfoldings into normalised weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import DTYPE, ConvParams, SEParams, ShapeError


@dataclass(frozen=True)
class GEFParams:
    se: SEParams  # over the 2C concatenation
    conv: ConvParams  # 2C -> C (full mask) or 2C -> 1 (single-channel mask)


@dataclass(frozen=True)
class DWFParams:
    gef: tuple[GEFParams, GEFParams, GEFParams, GEFParams]
    waf_se: SEParams  # over the 4C concatenation
    seed: int | None = None

    @property
    def channels(self) -> int:
        return self.waf_se.channels // 4

    @property
    def shared_gef(self) -> bool:
        return all(g is self.gef[0] for g in self.gef)


@dataclass(frozen=True)
class FusionWeights:
    w: tuple[float, float, float, float]

    def __post_init__(self):
        if any(x < 0 for x in self.w) or abs(sum(self.w) - 1) > 1e-6:
            raise ValueError(f"fusion weights must be nonnegative and sum to 1, got {self.w}")

    def __iter__(self):
        return iter(self.w)

    def __getitem__(self, i):
        return self.w[i]


EQUAL_WEIGHTS = FusionWeights((0.25, 0.25, 0.25, 0.25))


def make_gef_params(rng: np.random.Generator, channels: int, single_channel_mask: bool = False,
                    reduction: int = 16) -> GEFParams:
    se = SEParams.init(rng, 2 * channels, reduction)
    conv = ConvParams.init(rng, 2 * channels, 1 if single_channel_mask else channels)
    return GEFParams(se, conv)


def block_shared_se(rng: np.random.Generator, channels: int, blocks: int = 4,
                    reduction: int = 16) -> SEParams:
    """SE weights over ``blocks * channels`` inputs that treat every block alike.

    The squeeze matrix repeats one (hidden, C) block along its columns and the
    excitation rows repeat one (C, hidden) block, so permuting the input blocks
    permutes the gate blocks and nothing else.
    """
    full = SEParams.init(rng, blocks * channels, reduction)
    w1 = np.tile(full.w1[:, :channels], (1, blocks))
    w2 = np.tile(full.w2[:channels], (blocks, 1))
    b2 = np.tile(full.b2[:channels], blocks)
    return SEParams(w1.astype(DTYPE), full.b1, w2.astype(DTYPE), b2.astype(DTYPE))


def make_dwf_params(channels: int, seed: int, shared_gef: bool = True,
                    single_channel_mask: bool = False, block_shared_waf: bool = False,
                    reduction: int = 16) -> DWFParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameters; a pure function of its arguments."""
    rng = np.random.default_rng(seed)
    if shared_gef:
        g = make_gef_params(rng, channels, single_channel_mask, reduction)
        gef = (g, g, g, g)
    else:
        gef = tuple(make_gef_params(rng, channels, single_channel_mask, reduction) for _ in range(4))
    if block_shared_waf:
        waf = block_shared_se(rng, channels, 4, reduction)
    else:
        waf = SEParams.init(rng, 4 * channels, reduction)
    return DWFParams(gef, waf, seed)


def permute_dwf_params(params: DWFParams, perm: Sequence[int]) -> DWFParams:
    """Reorder per-unfolding GEF sets and WAF SE blocks so slot i holds old slot perm[i]."""
    perm = list(perm)
    if sorted(perm) != [0, 1, 2, 3]:
        raise ValueError(f"not a permutation of 0..3: {perm}")
    c = params.channels
    cols = np.concatenate([np.arange(p * c, (p + 1) * c) for p in perm])
    se = params.waf_se
    waf = SEParams(se.w1[:, cols], se.b1, se.w2[cols], se.b2[cols])
    gef = tuple(params.gef[p] for p in perm)
    return DWFParams(gef, waf, params.seed)


def gef(f_e, f_c, p: GEFParams) -> tuple[np.ndarray, np.ndarray]:
    """Return the importance map P and the CU-induced feature ``P*F_C + (1-P)*F_E``."""
    f_e = T.as_tensor(f_e)
    f_c = T.as_tensor(f_c)
    if f_e.shape != f_c.shape:
        raise ShapeError(f"GEF inputs differ in shape: {f_e.shape} vs {f_c.shape}")
    mask = T.sigmoid(T.conv3x3(T.se_block(T.concat_channels([f_e, f_c]), p.se), p.conv))
    m = mask.astype(np.float64)
    fused = m * f_c + (1.0 - m) * f_e
    return mask, fused.astype(DTYPE)


def waf_weights(f_cs: Sequence, se: SEParams) -> FusionWeights:
    f_cs = [T.as_tensor(f) for f in f_cs]
    if len(f_cs) != 4:
        raise ShapeError(f"WAF needs four features, got {len(f_cs)}")
    if len({f.shape for f in f_cs}) != 1:
        raise ShapeError("WAF inputs must share one shape")
    alpha = T.se_gate(T.concat_channels(f_cs), se).astype(np.float64)
    sums = [float(np.sum(block)) for block in np.split(alpha, 4)]
    total = sums[0] + sums[1] + sums[2] + sums[3]
    return FusionWeights(tuple(s / total for s in sums))


def weighted_sum(f_e, fused: Sequence, weights) -> np.ndarray:
    """``F_E + sum_i w_i F_i`` accumulated in slot order."""
    acc = T.as_tensor(f_e).astype(np.float64)
    for w, f in zip(weights, fused):
        acc = acc + float(w) * T.as_tensor(f).astype(np.float64)
    return acc.astype(DTYPE)


def dwf_fuse(f_e, f_cs: Sequence, params: DWFParams, use_waf: bool = True,
             return_details: bool = False):
    """Fuse the equirectangular feature with four unfolding features.

    With ``use_waf=False`` the four CU-induced features get equal weights.
    ``return_details`` additionally returns the weights and the masks.
    """
    f_e = T.as_tensor(f_e)
    if len(f_cs) != 4:
        raise ShapeError(f"DWF needs four unfolding features, got {len(f_cs)}")
    for f in f_cs:
        if T.as_tensor(f).shape != f_e.shape:
            raise ShapeError("DWF inputs must share one shape")
    masks, fused = [], []
    for f_c, g in zip(f_cs, params.gef):
        m, f = gef(f_e, f_c, g)
        masks.append(m)
        fused.append(f)
    weights = waf_weights(f_cs, params.waf_se) if use_waf else EQUAL_WEIGHTS
    out = weighted_sum(f_e, fused, weights)
    if return_details:
        return out, weights, masks
    return out
