"""Parameter dumps: one OMT1 file per array plus a JSON manifest.

OMT1 holds (C, H, W) float32 data, so every array is stored as a
``(1, 1, size)`` tensor and the manifest records its true shape.  Objects
shared between slots (for example tied GEF sets) are written once and listed
as aliases, so reloading keeps the sharing.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .tensor import DTYPE, read_omt, write_omt

MANIFEST = "manifest.json"
FORMAT = "omnisal-params"
VERSION = 1


def flatten(obj, prefix: str = "") -> tuple[dict, dict]:
    """Return ``(arrays, aliases)`` keyed by dotted paths."""
    arrays, aliases, seen = {}, {}, {}

    def walk(o, path):
        if isinstance(o, np.ndarray):
            arrays[path] = o
            return
        if dataclasses.is_dataclass(o) or isinstance(o, (tuple, list, dict)):
            if id(o) in seen and dataclasses.is_dataclass(o):
                aliases[path] = seen[id(o)]
                return
            seen[id(o)] = path
        if dataclasses.is_dataclass(o):
            for f in dataclasses.fields(o):
                walk(getattr(o, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(o, (tuple, list)):
            for i, v in enumerate(o):
                walk(v, f"{path}.{i}")
        elif isinstance(o, dict):
            for k, v in o.items():
                walk(v, f"{path}.{k}")

    walk(obj, prefix)
    return arrays, aliases


def unflatten(template, arrays: dict, aliases: dict | None = None):
    """Rebuild ``template`` with array leaves replaced from ``arrays``."""
    aliases = aliases or {}
    built = {}

    def walk(o, path):
        if path in aliases:
            return built[aliases[path]]
        if isinstance(o, np.ndarray):
            if path not in arrays:
                raise KeyError(f"missing parameter array {path!r}")
            a = np.asarray(arrays[path], dtype=o.dtype)
            if a.shape != o.shape:
                raise ValueError(f"{path}: shape {a.shape}, expected {o.shape}")
            return a
        if dataclasses.is_dataclass(o):
            kw = {f.name: walk(getattr(o, f.name), f"{path}.{f.name}" if path else f.name)
                  for f in dataclasses.fields(o)}
            out = dataclasses.replace(o, **kw)
        elif isinstance(o, tuple):
            out = tuple(walk(v, f"{path}.{i}") for i, v in enumerate(o))
        elif isinstance(o, list):
            out = [walk(v, f"{path}.{i}") for i, v in enumerate(o)]
        elif isinstance(o, dict):
            out = {k: walk(v, f"{path}.{k}") for k, v in o.items()}
        else:
            return o
        built[path] = out
        return out

    return walk(template, "")


def dump_params(obj, directory, kind: str, meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays, aliases = flatten(obj)
    entries = {}
    for name, arr in arrays.items():
        fname = f"{name}.omt"
        write_omt(directory / fname, np.asarray(arr, dtype=DTYPE).reshape(1, 1, -1))
        entries[name] = {"file": fname, "shape": list(arr.shape)}
    manifest = {"format": FORMAT, "version": VERSION, "kind": kind, "meta": meta or {},
                "tensors": entries, "aliases": aliases}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_arrays(directory) -> tuple[dict, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise ValueError(f"unsupported parameter manifest in {directory}")
    arrays = {}
    for name, entry in manifest["tensors"].items():
        arrays[name] = read_omt(directory / entry["file"]).reshape(entry["shape"])
    return manifest, arrays


def load_params(directory, template):
    manifest, arrays = load_arrays(directory)
    return unflatten(template, arrays, manifest.get("aliases"))


def dump_pipeline_params(params, directory) -> Path:
    return dump_params(params, directory, "pipeline", {"config": params.config.to_dict()})


def load_pipeline_params(directory):
    """Reload a pipeline dump; the manifest's config supplies the structure."""
    from .pipeline import PipelineConfig, make_pipeline_params

    manifest, arrays = load_arrays(directory)
    if manifest["kind"] != "pipeline":
        raise ValueError(f"not a pipeline dump: kind={manifest['kind']!r}")
    template = make_pipeline_params(PipelineConfig.from_dict(manifest["meta"]["config"]))
    return unflatten(template, arrays, manifest.get("aliases"))
