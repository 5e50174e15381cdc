import json

import numpy as np
import pytest

from omnisal.dwf import make_dwf_params
from omnisal.paramio import (dump_params, dump_pipeline_params, flatten, load_params,
                             load_pipeline_params)
from omnisal.pipeline import PipelineConfig, forward, make_pipeline_params


def arrays_equal(a, b):
    fa, _ = flatten(a)
    fb, _ = flatten(b)
    return fa.keys() == fb.keys() and all(fa[k].tobytes() == fb[k].tobytes() for k in fa)


def test_pipeline_roundtrip(tmp_path, pipeline_ep):
    params = make_pipeline_params(PipelineConfig(seed=5, shared_gef=False))
    dump_pipeline_params(params, tmp_path)
    loaded = load_pipeline_params(tmp_path)
    assert arrays_equal(params, loaded)
    assert forward(pipeline_ep, loaded).saliency.tobytes() == forward(pipeline_ep, params).saliency.tobytes()


def test_sharing_survives(tmp_path):
    params = make_dwf_params(16, seed=1, shared_gef=True)
    dump_params(params, tmp_path, "dwf")
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["aliases"] == {"gef.1": "gef.0", "gef.2": "gef.0", "gef.3": "gef.0"}
    loaded = load_params(tmp_path, make_dwf_params(16, seed=99))
    assert loaded.shared_gef
    assert arrays_equal(params, loaded)


def test_manifest_records_shapes(tmp_path):
    params = make_dwf_params(16, seed=1)
    dump_params(params, tmp_path, "dwf")
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    entry = manifest["tensors"]["gef.0.conv.kernel"]
    assert entry["shape"] == [16, 32, 3, 3]
    assert (tmp_path / entry["file"]).read_bytes()[:4] == b"OMT1"


def test_shape_mismatch(tmp_path):
    dump_params(make_dwf_params(16, seed=1), tmp_path, "dwf")
    with pytest.raises(ValueError):
        load_params(tmp_path, make_dwf_params(32, seed=1))


def test_rejects_other_kind(tmp_path):
    dump_params(make_dwf_params(16, seed=1), tmp_path, "dwf")
    with pytest.raises(ValueError):
        load_pipeline_params(tmp_path)
