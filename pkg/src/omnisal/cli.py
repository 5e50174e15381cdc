"""Command-line front end.

Exit codes: 0 success, 1 I/O error, 2 validation error (bad config, shape or
aspect), 3 selftest failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import UnidentifiedImageError

from . import __version__
from .imageio import read_image, write_image, write_mask
from .projection import FACES, RING, CubeFaceSet, check_equirect, cube_to_ep, ep_to_cube, render_43_canvas, unfold
from .tensor import ShapeError, write_omt

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_SELFTEST = 0, 1, 2, 3
RUN_SCHEMA = "omnisal.run/1"


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Everything a ``forward`` run depends on; saved next to its outputs."""

    model: dict = field(default_factory=dict)  # PipelineConfig fields
    ablations: list = field(default_factory=list)
    threads: int = 1
    input: str | None = None
    output: str | None = None

    def pipeline_config(self):
        from .pipeline import PipelineConfig

        return PipelineConfig.from_dict(self.model)

    def validate(self) -> "RunConfig":
        from .pipeline import Ablation

        self.pipeline_config()
        Ablation.from_names(self.ablations)
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ValueError(f"threads: must be a positive integer, got {self.threads!r}")
        return self

    def to_dict(self) -> dict:
        return {"schema": RUN_SCHEMA, "omnisal_version": __version__,
                "model": self.pipeline_config().to_dict(), "ablations": list(self.ablations),
                "threads": self.threads, "input": self.input, "output": self.output}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        schema = d.pop("schema", RUN_SCHEMA)
        if schema != RUN_SCHEMA:
            raise ValueError(f"schema: expected {RUN_SCHEMA!r}, got {schema!r}")
        d.pop("omnisal_version", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if not isinstance(d.get("model", {}), dict):
            raise ValueError("model: must be an object")
        return cls(**d)


def resolve_threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("OMNISAL_THREADS")
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError:
        raise CLIError(f"OMNISAL_THREADS must be an integer, got {env!r}", EXIT_VALIDATION) from None


def _read(path, channels=None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"no such file: {path}", EXIT_IO)
    try:
        return read_image(path, channels)
    except (UnidentifiedImageError, OSError) as exc:
        raise CLIError(f"cannot read image {path}: {exc}", EXIT_IO) from None


def _outdir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# commands -----------------------------------------------------------------

def cmd_convert(args) -> int:
    if args.direction == "e2c":
        ep = check_equirect(_read(args.input), image=True)
        faces = ep_to_cube(ep, args.face_size)
        out = _outdir(args.output)
        for label in FACES:
            write_image(out / f"face_{label}.png", faces[label])
        print(f"wrote 6 faces of side {faces.side} to {out}")
    else:
        src = Path(args.input)
        faces = {label: _read(src / f"face_{label}.png") for label in FACES}
        chans = {f.shape[0] for f in faces.values()}
        if len(chans) != 1:
            raise CLIError("faces mix grayscale and colour", EXIT_VALIDATION)
        cube = CubeFaceSet.from_dict(faces)
        heq = args.height or 2 * cube.side
        ep = cube_to_ep(cube, heq)
        write_image(args.output, ep)
        print(f"wrote {2 * heq}x{heq} equirectangular image to {args.output}")
    return EXIT_OK


def cmd_unfold(args) -> int:
    ep = check_equirect(_read(args.input), image=True)
    pair = unfold(ep_to_cube(ep, args.face_size), args.center)
    out = _outdir(args.output)
    write_image(out / f"cu_{args.center}_horizontal.png", pair.horizontal)
    write_image(out / f"cu_{args.center}_vertical.png", pair.vertical)
    if args.canvas:
        canvas, mask = render_43_canvas(pair)
        write_image(out / f"cu_{args.center}_canvas.png", canvas)
        write_mask(out / f"cu_{args.center}_canvas_mask.png", mask)
    print(f"wrote unfolding centred on {args.center} to {out}")
    return EXIT_OK


def build_run_config(args) -> RunConfig:
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CLIError(f"no such config file: {path}", EXIT_IO)
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CLIError(f"config {path} is not valid JSON: {exc}", EXIT_VALIDATION) from None
        if not isinstance(base, dict):
            raise CLIError("config: top level must be an object", EXIT_VALIDATION)
    run = RunConfig.from_dict(base)
    model = dict(run.model)
    for key in ("seed", "face_size"):
        if getattr(args, key) is not None:
            model[key] = getattr(args, key)
    for flag in ("shared_gef", "block_shared_waf", "single_channel_mask", "sigmoid_masks",
                 "shared_fm_head"):
        if getattr(args, flag) is not None:
            model[flag] = getattr(args, flag)
    if args.cu_order:
        model["cu_order"] = list(args.cu_order)
    run.model = model
    if args.ablate:
        run.ablations = list(args.ablate)
    if args.threads is not None or "threads" not in base:
        run.threads = resolve_threads(args.threads)
    run.input, run.output = str(args.input), str(args.output)
    return run.validate()


def cmd_forward(args) -> int:
    from .pipeline import Ablation, forward, make_pipeline_params

    run = build_run_config(args)
    ep = check_equirect(_read(args.input), image=True)
    params = make_pipeline_params(run.pipeline_config())
    out = forward(ep, params, Ablation.from_names(run.ablations), threads=run.threads,
                  keep=bool(args.dump))
    target = Path(args.output)
    target.parent.mkdir(parents=True, exist_ok=True)
    stem = target.with_suffix("")
    write_image(target, out.saliency)
    for level, side in out.sides.items():
        write_image(f"{stem}_side{level}.png", side)
    if args.omt:
        for name, m in out.maps().items():
            write_omt(f"{stem}_{name}.omt", m)
    if args.dump:
        dump_dir = _outdir(args.dump_dir or f"{stem}_dump")
        names = list(out.intermediates) if "all" in args.dump else args.dump
        for name in names:
            if name not in out.intermediates:
                raise CLIError(f"unknown intermediate {name!r}; choose from "
                               f"{', '.join(out.intermediates)}", EXIT_VALIDATION)
            write_omt(dump_dir / f"{name}.omt", out.intermediates[name])
    prov = run.to_dict()
    prov["shapes"] = [[n, list(s)] for n, s in out.shapes]
    prov["fusion_weights"] = list(out.weights) if out.weights is not None else None
    Path(f"{stem}.config.json").write_text(json.dumps(prov, indent=2) + "\n")
    print(f"wrote saliency map {target} and 3 side outputs")
    return EXIT_OK


def _map_files(directory) -> dict:
    directory = Path(directory)
    if not directory.is_dir():
        raise CLIError(f"no such directory: {directory}", EXIT_IO)
    exts = {".png", ".pgm", ".ppm", ".jpg", ".jpeg", ".bmp"}
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in exts}


def cmd_eval(args) -> int:
    from .metrics import EvalReport

    preds, gts = _map_files(args.pred_dir), _map_files(args.gt_dir)
    names = sorted(set(preds) & set(gts))
    if not names:
        raise CLIError("no prediction/ground-truth pairs with matching names", EXIT_VALIDATION)
    missing = sorted(set(gts) - set(preds))
    if missing:
        print(f"warning: {len(missing)} ground-truth maps have no prediction", file=sys.stderr)

    def pairs():
        for name in names:
            s = _read(preds[name], channels=1)[0]
            g = (_read(gts[name], channels=1)[0] >= 0.5).astype(np.float64)
            if s.shape != g.shape:
                raise CLIError(f"{name}: prediction {s.shape} vs ground truth {g.shape}",
                               EXIT_VALIDATION)
            yield name, s, g

    report = EvalReport.evaluate(pairs())
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    report.write_csv(args.csv or out.with_suffix(".csv"))
    mean = report.mean()
    print(" ".join(f"{k}={v:.4f}" for k, v in mean.items()))
    return EXIT_OK


def cmd_fixture(args) -> int:
    from .fixtures import regenerate_bundled, smooth_sphere_image, textured_image

    out = _outdir(args.output)
    if args.kind == "bundled":
        names = regenerate_bundled(out)
    else:
        img = (smooth_sphere_image(args.height) if args.kind == "smooth"
               else textured_image(args.height, seed=args.seed))
        names = [f"{args.kind}_{2 * args.height}x{args.height}.png"]
        write_image(out / names[0], img)
    print("wrote " + ", ".join(names))
    return EXIT_OK


def cmd_params(args) -> int:
    from .paramio import dump_pipeline_params
    from .pipeline import PipelineConfig, make_pipeline_params

    model = {}
    if args.config:
        model = RunConfig.from_dict(json.loads(Path(args.config).read_text())).model
    if args.seed is not None:
        model["seed"] = args.seed
    params = make_pipeline_params(PipelineConfig.from_dict(model))
    path = dump_pipeline_params(params, args.output)
    print(f"wrote parameter manifest {path}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(quick=not args.full)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_SELFTEST if failed else EXIT_OK


# parser -------------------------------------------------------------------

def _bool_flag(p, name: str, help: str) -> None:
    p.add_argument(f"--{name.replace('_', '-')}", dest=name, action=argparse.BooleanOptionalAction,
                   default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omnisal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"omnisal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="equirectangular <-> cube faces")
    p.add_argument("direction", choices=["e2c", "c2e"])
    p.add_argument("input", help="EP image (e2c) or directory of face_X.png files (c2e)")
    p.add_argument("output", help="output directory (e2c) or EP image path (c2e)")
    p.add_argument("--face-size", type=int, default=None, help="cube face side; default width/4")
    p.add_argument("--height", type=int, default=None, help="EP height for c2e; default 2*face side")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("unfold", help="write the two strips of a 4-3 cube unfolding")
    p.add_argument("input")
    p.add_argument("output", help="output directory")
    p.add_argument("--center", choices=list(RING), default="F")
    p.add_argument("--canvas", action="store_true", help="also write the masked 3a x 4a canvas")
    p.add_argument("--face-size", type=int, default=None)
    p.set_defaults(func=cmd_unfold)

    p = sub.add_parser("forward", help="run the saliency network on one EP image")
    p.add_argument("input")
    p.add_argument("output", help="saliency PNG; side outputs and provenance go alongside")
    p.add_argument("--config", help="RunConfig JSON; flags below override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--face-size", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="branch parallelism; falls back to $OMNISAL_THREADS, then 1")
    p.add_argument("--ablate", action="append", default=None,
                   choices=["no_cu", "no_dwf", "no_fr", "no_waf", "six_faces"])
    p.add_argument("--cu-order", nargs=4, choices=list(RING), default=None,
                   help="order of the four unfolding centres")
    _bool_flag(p, "shared_gef", "share GEF parameters across unfoldings")
    _bool_flag(p, "block_shared_waf", "tie WAF SE weights across the four blocks")
    _bool_flag(p, "single_channel_mask", "GEF importance map with one channel")
    _bool_flag(p, "sigmoid_masks", "squash FR filtration and detail masks with a sigmoid")
    _bool_flag(p, "shared_fm_head", "one filtration-mask head for all FR sources")
    p.add_argument("--dump", action="append", default=None, metavar="NAME",
                   help="write a named intermediate tensor as OMT1 ('all' for every one)")
    p.add_argument("--dump-dir", default=None)
    p.add_argument("--omt", action="store_true", help="also write the maps as float OMT1 files")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("eval", help="score predicted maps against binary ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("output", help="report JSON path")
    p.add_argument("--csv", default=None, help="per-image CSV; default next to the JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fixture", help="generate synthetic equirectangular images")
    p.add_argument("kind", choices=["bundled", "smooth", "textured"])
    p.add_argument("output", help="output directory")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("params", help="dump seeded network parameters")
    p.add_argument("action", choices=["dump"])
    p.add_argument("output", help="output directory")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("selftest", help="run the acceptance checks")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--quick", action="store_true", help="reduced trial counts (default)")
    mode.add_argument("--full", action="store_true", help="full trial counts")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ShapeError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
