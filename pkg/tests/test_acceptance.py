"""Acceptance suite: every criterion at full trial counts and stated tolerances.

Each test prints one PASS/FAIL line; run with ``pytest -s tests/test_acceptance.py``
to see them, or ``omnisal selftest --full`` for the same checks from the CLI.
"""
import subprocess
import sys
import time

import pytest

from omnisal import cli, selftest
from omnisal.imageio import write_image


def report(res: selftest.CheckResult) -> None:
    print(res.line())
    assert res.passed, res.line()


@pytest.mark.parametrize("check", selftest.CHECKS, ids=lambda f: f.__name__.removeprefix("check_"))
def test_criterion(check):
    report(selftest.run_check(check, quick=False))


def test_runtime_budget_quick_cli():
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "omnisal.cli", "selftest", "--quick"],
                          capture_output=True, text=True, timeout=300)
    elapsed = time.perf_counter() - t0
    ok = proc.returncode == 0 and elapsed < selftest.QUICK_BUDGET_S
    report(selftest.CheckResult("runtime_budget_quick", ok,
                                f"exit={proc.returncode} wall={elapsed:.1f}s budget={selftest.QUICK_BUDGET_S:.0f}s",
                                elapsed))
    assert proc.stdout.count("PASS") == len(selftest.CHECKS) + 1


def test_runtime_budget_full():
    results = selftest.run_all(quick=False, echo=None)
    budget = results[-1]
    print("\n".join(r.line() for r in results[:-1]))
    report(budget)
    assert all(r.passed for r in results)


def test_cli_forward_determinism(tmp_path, pipeline_ep):
    src = tmp_path / "ep.png"
    write_image(src, pipeline_ep)
    blobs = []
    for i, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"run{i}" / "sal.png"
        assert cli.main(["forward", str(src), str(out), "--threads", str(threads)]) == 0
        blobs.append(out.read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    report(selftest.CheckResult("cli_forward_determinism", ok, "threads 1,1,4 byte-identical"))
