import json

import numpy as np
import pytest

from omnisal import cli, selftest
from omnisal.fixtures import SMOOTH_FIXTURE, load_bundled
from omnisal.imageio import read_image, write_image
from omnisal.metrics import psnr
from omnisal.selftest import CLI_ROUNDTRIP_PSNR_FLOOR


@pytest.fixture
def ep_png(tmp_path, pipeline_ep):
    path = tmp_path / "ep.png"
    write_image(path, pipeline_ep)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestConvert:
    def test_e2c_paper_size(self, tmp_path):
        src = tmp_path / "big.png"
        write_image(src, np.full((3, 512, 1024), 0.25, np.float32))
        assert run("convert", "e2c", src, tmp_path / "faces", "--face-size", 256) == 0
        names = sorted(p.name for p in (tmp_path / "faces").iterdir())
        assert names == sorted(f"face_{f}.png" for f in "FBLRTD")
        assert read_image(tmp_path / "faces" / "face_T.png").shape == (3, 256, 256)

    def test_constant_roundtrip_exact(self, tmp_path):
        src = tmp_path / "c.png"
        write_image(src, np.full((1, 16, 32), 128 / 255, np.float32))
        assert run("convert", "e2c", src, tmp_path / "f") == 0
        assert run("convert", "c2e", tmp_path / "f", tmp_path / "back.png") == 0
        assert run("convert", "e2c", tmp_path / "back.png", tmp_path / "f2") == 0
        assert (tmp_path / "back.png").read_bytes() == src.read_bytes()
        for f in "FBLRTD":
            assert read_image(tmp_path / "f2" / f"face_{f}.png").tobytes() == \
                read_image(tmp_path / "f" / f"face_{f}.png").tobytes()

    def test_smooth_roundtrip_floor(self, tmp_path):
        src = tmp_path / "s.png"
        write_image(src, load_bundled(SMOOTH_FIXTURE))
        assert run("convert", "e2c", src, tmp_path / "f", "--face-size", 128) == 0
        assert run("convert", "c2e", tmp_path / "f", tmp_path / "b.png", "--height", 256) == 0
        assert psnr(read_image(tmp_path / "b.png"), read_image(src)) >= CLI_ROUNDTRIP_PSNR_FLOOR

    def test_aspect_exit_code(self, tmp_path, capsys):
        src = tmp_path / "sq.png"
        write_image(src, np.zeros((1, 8, 8)))
        assert run("convert", "e2c", src, tmp_path / "f") == cli.EXIT_VALIDATION
        assert "2 x height" in capsys.readouterr().err

    def test_missing_input(self, tmp_path):
        assert run("convert", "e2c", tmp_path / "nope.png", tmp_path / "f") == cli.EXIT_IO

    def test_corrupt_input(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image")
        assert run("convert", "e2c", bad, tmp_path / "f") == cli.EXIT_IO


class TestUnfold:
    @pytest.mark.parametrize("center", ["F", "R", "B", "L"])
    def test_strips(self, tmp_path, ep_png, center):
        assert run("unfold", ep_png, tmp_path / "u", "--center", center, "--canvas") == 0
        h = read_image(tmp_path / "u" / f"cu_{center}_horizontal.png")
        v = read_image(tmp_path / "u" / f"cu_{center}_vertical.png")
        c = read_image(tmp_path / "u" / f"cu_{center}_canvas.png")
        assert h.shape == (3, 16, 64) and v.shape == (3, 48, 16) and c.shape == (3, 48, 64)


class TestForward:
    def test_outputs_and_provenance(self, tmp_path, ep_png):
        out = tmp_path / "o" / "sal.png"
        assert run("forward", ep_png, out, "--seed", 3, "--omt") == 0
        assert read_image(out).shape == (1, 32, 64)
        for k in (2, 3, 4):
            assert (tmp_path / "o" / f"sal_side{k}.png").exists()
        prov = json.loads((tmp_path / "o" / "sal.config.json").read_text())
        assert prov["schema"] == cli.RUN_SCHEMA and prov["model"]["seed"] == 3
        assert len(prov["fusion_weights"]) == 4
        assert (tmp_path / "o" / "sal_saliency.omt").exists()

    def test_byte_identical_reruns(self, tmp_path, ep_png):
        outs = []
        for i, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"r{i}" / "sal.png"
            assert run("forward", ep_png, out, "--threads", threads) == 0
            outs.append(out.read_bytes() + (out.parent / "sal_side2.png").read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_env_threads(self, tmp_path, ep_png, monkeypatch):
        monkeypatch.setenv("OMNISAL_THREADS", "3")
        assert run("forward", ep_png, tmp_path / "s.png") == 0
        assert json.loads((tmp_path / "s.config.json").read_text())["threads"] == 3

    def test_config_file_and_override(self, tmp_path, ep_png):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"schema": cli.RUN_SCHEMA, "model": {"seed": 9, "shared_gef": False},
                                   "ablations": ["no_waf"], "threads": 2}))
        assert run("forward", ep_png, tmp_path / "s.png", "--config", cfg, "--seed", 11) == 0
        prov = json.loads((tmp_path / "s.config.json").read_text())
        assert prov["model"]["seed"] == 11 and prov["model"]["shared_gef"] is False
        assert prov["ablations"] == ["no_waf"] and prov["threads"] == 2
        assert prov["fusion_weights"] == [0.25] * 4

    @pytest.mark.parametrize("config,field", [({"model": {"sed": 1}}, "sed"),
                                              ({"threads": 0}, "threads"),
                                              ({"schema": "other/9"}, "schema"),
                                              ({"model": {"cu_order": ["F", "F", "R", "L"]}}, "cu_order")])
    def test_config_errors_name_fields(self, tmp_path, ep_png, capsys, config, field):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps(config))
        assert run("forward", ep_png, tmp_path / "s.png", "--config", cfg) == cli.EXIT_VALIDATION
        assert field in capsys.readouterr().err

    def test_inconsistent_ablations(self, tmp_path, ep_png):
        code = run("forward", ep_png, tmp_path / "s.png", "--ablate", "no_cu", "--ablate", "six_faces")
        assert code == cli.EXIT_VALIDATION

    def test_dump_intermediate(self, tmp_path, ep_png):
        assert run("forward", ep_png, tmp_path / "s.png", "--dump", "dwf.out", "--dump-dir", tmp_path / "d") == 0
        from omnisal.tensor import read_omt
        assert read_omt(tmp_path / "d" / "dwf.out.omt").shape == (64, 1, 2)

    def test_dump_unknown(self, tmp_path, ep_png):
        assert run("forward", ep_png, tmp_path / "s.png", "--dump", "nope") == cli.EXIT_VALIDATION


class TestEval:
    def test_identical_maps(self, tmp_path, rng):
        for d in ("pred", "gt"):
            (tmp_path / d).mkdir()
        for i in range(3):
            g = (rng.random((1, 8, 8)) < 0.4).astype(np.float32)
            write_image(tmp_path / "pred" / f"m{i}.png", g)
            write_image(tmp_path / "gt" / f"m{i}.png", g)
        assert run("eval", tmp_path / "pred", tmp_path / "gt", tmp_path / "rep.json") == 0
        rep = json.loads((tmp_path / "rep.json").read_text())
        assert rep["mean"]["MAE"] == 0.0 and rep["count"] == 3
        assert (tmp_path / "rep.csv").read_text().count("\n") == 4

    def test_no_pairs(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        assert run("eval", tmp_path / "a", tmp_path / "b", tmp_path / "r.json") == cli.EXIT_VALIDATION

    def test_missing_dir(self, tmp_path):
        assert run("eval", tmp_path / "x", tmp_path / "y", tmp_path / "r.json") == cli.EXIT_IO


class TestMisc:
    def test_fixture_and_params(self, tmp_path):
        assert run("fixture", "textured", tmp_path / "fx", "--height", 32, "--seed", 1) == 0
        assert (tmp_path / "fx" / "textured_64x32.png").exists()
        assert run("params", "dump", tmp_path / "p", "--seed", 4) == 0
        assert json.loads((tmp_path / "p" / "manifest.json").read_text())["meta"]["config"]["seed"] == 4

    def test_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("forward", "--help")
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--config", "--threads", "--ablate", "--sigmoid-masks", "--dump", "OMNISAL_THREADS"):
            assert flag in text

    def test_selftest_failure_exit_code(self, monkeypatch):
        def broken(quick=False):
            return selftest.CheckResult("broken", False, "forced")
        monkeypatch.setattr(selftest, "CHECKS", [broken])
        assert run("selftest", "--quick") == cli.EXIT_SELFTEST

    def test_selftest_success_exit_code(self, monkeypatch):
        monkeypatch.setattr(selftest, "CHECKS", [selftest.check_seams])
        assert run("selftest") == cli.EXIT_OK
