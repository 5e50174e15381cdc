"""Deterministic forward pass of the multi-projection saliency network at toy scale.

The pretrained backbone is replaced by a five-stage stub encoder (3x3 conv,
relu, 2x2 average pool) shared by the equirectangular branch and every cube
unfolding strip.  Unfolding features are projected back to equirectangular
form after stage 2, fused at stage 5, and decoded by three FR levels.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .dwf import DWFParams, FusionWeights, dwf_fuse, gef, make_dwf_params
from .fr import FRLevelInputs, FRParams, concat_fusion, fr_module, make_fr_params
from .metrics import LossWeights, bce_loss, total_loss
from .projection import RING, CubeFaceSet, cep_merge, check_equirect, cube_to_ep, ep_to_cube, unfold
from .tensor import DTYPE, ConvParams, ShapeError

FR_LEVELS = (4, 3, 2)
ABLATIONS = ("no_cu", "no_dwf", "no_fr", "no_waf", "six_faces")
_CONFLICTS = [
    ("no_cu", "no_dwf"),
    ("no_cu", "no_waf"),
    ("no_cu", "six_faces"),
    ("no_dwf", "no_waf"),
    ("six_faces", "no_waf"),
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Ablation:
    """Structural substitutions used by the ablation study.

    ``no_cu`` drops the unfoldings, ``no_dwf`` adds features instead of
    fusing them, ``no_fr`` swaps each FR level for concat + conv,
    ``no_waf`` uses equal weights, ``six_faces`` feeds the six faces separately.
    """

    no_cu: bool = False
    no_dwf: bool = False
    no_fr: bool = False
    no_waf: bool = False
    six_faces: bool = False

    def __post_init__(self):
        for a, b in _CONFLICTS:
            if getattr(self, a) and getattr(self, b):
                raise ConfigError(f"ablation flags {a} and {b} are mutually inconsistent")

    @classmethod
    def from_names(cls, names) -> "Ablation":
        names = list(names)
        bad = set(names) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablation flags: {sorted(bad)}")
        return cls(**{n: True for n in names})

    def active(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    in_channels: int = 3
    encoder_channels: tuple = (8, 16, 32, 48, 64)
    fr_channels: tuple = (64, 32, 16)
    se_reduction: int = 16
    shared_gef: bool = True
    block_shared_waf: bool = False
    single_channel_mask: bool = False
    sigmoid_masks: bool = False
    shared_fm_head: bool = False
    cu_order: tuple = RING
    face_size: int | None = None
    init_gain: float = float(np.sqrt(6.0))  # variance-preserving for relu convs

    def validate(self) -> "PipelineConfig":
        if len(self.encoder_channels) != 5 or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels must list five positive widths")
        if len(self.fr_channels) != 3 or min(self.fr_channels) < 1:
            raise ConfigError("fr_channels must list three positive widths")
        if sorted(self.cu_order) != sorted(RING):
            raise ConfigError(f"cu_order must be a permutation of {RING}")
        if self.in_channels not in (1, 3):
            raise ConfigError("in_channels must be 1 or 3")
        if not self.init_gain > 0:
            raise ConfigError("init_gain must be positive")
        if self.se_reduction < 1:
            raise ConfigError("se_reduction must be positive")
        if self.face_size is not None and (self.face_size < 4 or self.face_size % 4):
            raise ConfigError("face_size must be a positive multiple of 4")
        c5 = self.encoder_channels[4]
        for c in (2 * c5, 4 * c5):
            try:
                T.se_hidden(c, self.se_reduction)
            except ShapeError as exc:
                raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("encoder_channels", "fr_channels", "cu_order"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d).validate()


def child_seed(seed: int, name: str) -> int:
    """Stable per-component seed, so one component's params never shift another's."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class PipelineParams:
    config: PipelineConfig
    encoder: tuple  # five ConvParams
    dwf: DWFParams
    fr: dict  # level -> FRParams
    fr_concat: dict  # "k{level}_n{sources}" -> ConvParams
    side_heads: dict  # level -> ConvParams
    final_head: ConvParams


def make_pipeline_params(config: PipelineConfig | None = None) -> PipelineParams:
    config = (config or PipelineConfig()).validate()
    seed = config.seed
    enc_ch = config.encoder_channels
    rng = np.random.default_rng(child_seed(seed, "encoder"))
    widths = (config.in_channels,) + tuple(enc_ch)
    gain = config.init_gain
    encoder = tuple(ConvParams.init(rng, widths[s], widths[s + 1], gain) for s in range(5))

    dwf = make_dwf_params(
        enc_ch[4], child_seed(seed, "dwf"), shared_gef=config.shared_gef,
        single_channel_mask=config.single_channel_mask,
        block_shared_waf=config.block_shared_waf, reduction=config.se_reduction,
    )
    fr, fr_concat, side_heads = {}, {}, {}
    dec_in = enc_ch[4]
    for level, width in zip(FR_LEVELS, config.fr_channels):
        enc = enc_ch[level - 1]
        fr[level] = make_fr_params(dec_in, enc, width, width, child_seed(seed, f"fr{level}"),
                                   shared_fm_head=config.shared_fm_head, gain=gain)
        crng = np.random.default_rng(child_seed(seed, f"fr_concat{level}"))
        for n in (1, 2, 5):
            fr_concat[f"k{level}_n{n}"] = ConvParams.init(crng, dec_in + n * enc, width, gain)
        hrng = np.random.default_rng(child_seed(seed, f"side{level}"))
        side_heads[level] = ConvParams.init(hrng, width, 1, gain)
        dec_in = width
    final_head = ConvParams.init(np.random.default_rng(child_seed(seed, "final")), dec_in, 1, gain)
    return PipelineParams(config, encoder, dwf, fr, fr_concat, side_heads, final_head)


@dataclass
class ForwardOutput:
    saliency: np.ndarray  # (1, H, W)
    sides: dict  # level -> (1, H / 2**level, W / 2**level)
    weights: FusionWeights | None
    shapes: list = field(default_factory=list)  # (name, shape) in execution order
    param_usage: set = field(default_factory=set)
    intermediates: dict = field(default_factory=dict)

    def maps(self) -> dict:
        out = {"saliency": self.saliency}
        out.update({f"side{k}": v for k, v in self.sides.items()})
        return out


def encode_stage(x, p: ConvParams) -> np.ndarray:
    return T.avg_pool2(T.relu(T.conv3x3(x, p)))


def encode(x, encoder, stages) -> list[np.ndarray]:
    """Run the given stub stages (1-based) and return each stage output."""
    outs = []
    for s in stages:
        x = encode_stage(x, encoder[s - 1])
        outs.append(x)
    return outs


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def prepare_input(ep, config: PipelineConfig) -> np.ndarray:
    ep = check_equirect(ep, image=True)
    c, h, _ = ep.shape
    if h % 32:
        raise ShapeError(f"input height must be divisible by 32, got {h}")
    if c != config.in_channels:
        if c == 1:
            ep = np.repeat(ep, config.in_channels, axis=0)
        else:
            raise ShapeError(f"model expects {config.in_channels} channels, got {c}")
    return ep


def forward(ep, params: PipelineParams, ablation: Ablation | None = None, threads: int = 1,
            keep: bool = False) -> ForwardOutput:
    """Full forward pass; ``keep`` retains every named intermediate tensor."""
    ab = ablation or Ablation()
    cfg = params.config
    ep = prepare_input(ep, cfg)
    _, h, w = ep.shape
    a = cfg.face_size or w // 4
    if a % 4:
        raise ShapeError(f"face side {a} must be divisible by 4")
    shapes, usage, inter = [], {"encoder"}, {}

    def record(name, x):
        shapes.append((name, tuple(x.shape)))
        if keep:
            inter[name] = x
        return x

    record("input", ep)
    enc = params.encoder
    ep_feats = encode(ep, enc, (1, 2))
    record("ep.s1", ep_feats[0])
    record("ep.s2", ep_feats[1])

    # cube-unfolding branches (stages 1-2 on strips, then CEP)
    cu_names: list[str] = []
    cu_feats: list[list[np.ndarray]] = []
    if not ab.no_cu:
        faces = ep_to_cube(ep, a)
        if ab.six_faces:
            face_feats = _map(lambda f: encode(f, enc, (1, 2)), list(faces.data), threads)
            for label, ff in zip("FBLRTD", face_feats):
                record(f"face{label}.s1", ff[0])
                record(f"face{label}.s2", ff[1])
            merged = cube_to_ep(CubeFaceSet(np.stack([ff[1] for ff in face_feats])), h // 4)
            cu_names = ["C1"]
            cu_feats = [[None, merged]]
        else:
            pairs = [unfold(faces, c) for c in cfg.cu_order]
            strips = [s for p in pairs for s in (p.horizontal, p.vertical)]
            strip_feats = _map(lambda s: encode(s, enc, (1, 2)), strips, threads)
            for i, pair in enumerate(pairs):
                hf, vf = strip_feats[2 * i], strip_feats[2 * i + 1]
                for s in (0, 1):
                    record(f"cu{i + 1}.h.s{s + 1}", hf[s])
                    record(f"cu{i + 1}.v.s{s + 1}", vf[s])
                merged = cep_merge(hf[1], vf[1], pair.layout, h // 4)
                cu_names.append(f"C{i + 1}")
                cu_feats.append([None, merged])

    # stages 3-5 on every equirectangular-form branch
    branches = [ep_feats[1]] + [f[1] for f in cu_feats]
    deep = _map(lambda x: encode(x, enc, (3, 4, 5)), branches, threads)
    ep_feats += deep[0]
    for name, feats, d in zip(cu_names, cu_feats, deep[1:]):
        record(f"{name.lower()}.cep", feats[1])
        feats += d
    for s in (3, 4, 5):
        record(f"ep.s{s}", ep_feats[s - 1])
        for name, feats in zip(cu_names, cu_feats):
            record(f"{name.lower()}.s{s}", feats[s - 1])

    # fusion at the deepest level
    f_e5 = ep_feats[4]
    cu5 = [f[4] for f in cu_feats]
    weights = None
    if ab.no_cu:
        fused = f_e5
    elif ab.six_faces:
        if ab.no_dwf:
            fused = T.add(f_e5, cu5[0])
        else:
            usage.add("dwf.gef.0")
            _, f1 = gef(f_e5, cu5[0], params.dwf.gef[0])
            fused = T.add(f_e5, f1)
    elif ab.no_dwf:
        acc = f_e5.astype(np.float64)
        for f in cu5:
            acc = acc + f
        fused = acc.astype(DTYPE)
    else:
        usage.update(f"dwf.gef.{i}" for i in range(4))
        if not ab.no_waf:
            usage.add("dwf.waf")
        fused, weights, masks = dwf_fuse(f_e5, cu5, params.dwf, use_waf=not ab.no_waf,
                                         return_details=True)
        for i, m in enumerate(masks):
            record(f"dwf.mask{i + 1}", m)
    record("dwf.out", fused)

    # decoder
    dec = fused
    sides = {}
    for level in FR_LEVELS:
        sources = {name: feats[level - 1] for name, feats in zip(cu_names, cu_feats)}
        sources["E"] = ep_feats[level - 1]
        inputs = FRLevelInputs(dec, sources)
        if ab.no_fr:
            key = f"k{level}_n{len(sources)}"
            usage.add(f"fr_concat.{key}")
            dec = concat_fusion(inputs, params.fr_concat[key])
        else:
            usage.update({f"fr{level}.core"} | {f"fr{level}.fm.{j}" for j in sources}
                         | {f"fr{level}.enc.{j}" for j in sources})
            dec = fr_module(inputs, params.fr[level], sigmoid_mask=cfg.sigmoid_masks)
        record(f"fr{level}.out", dec)
        usage.add(f"head.side{level}")
        sides[level] = record(f"side{level}", T.sigmoid(T.conv3x3(dec, params.side_heads[level])))

    usage.add("head.final")
    logits = T.conv3x3(dec, params.final_head)
    record("final.logits", logits)
    saliency = record("saliency", T.sigmoid(T.bilinear_resize(logits, h, w)))
    return ForwardOutput(saliency, sides, weights, shapes, usage, inter)


def ablate(ep, params: PipelineParams, flags=(), threads: int = 1) -> ForwardOutput:
    return forward(ep, params, Ablation.from_names(flags), threads=threads)


def supervision_loss(out: ForwardOutput, gt, weights: LossWeights | None = None) -> float:
    """Domination loss on the final map plus weighted side losses.

    Side outputs are bilinearly upsampled to the ground-truth size first.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim == 3:
        gt = gt[0]
    h, w = gt.shape
    dom = bce_loss(out.saliency[0], gt)
    sides = [bce_loss(T.bilinear_resize(out.sides[k], h, w)[0], gt) for k in FR_LEVELS]
    return total_loss(dom, sides, weights)
