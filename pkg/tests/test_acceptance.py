"""Acceptance suite: each criterion runs at its stated scale and tolerance and
prints one PASS/FAIL line.

The desk sweep (criteria 1-4 and 9) runs once per session from
``configs/desk.json`` and takes a few minutes on one core.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from fiapsim import experiments, rmf, stats
from fiapsim.cli import main
from fiapsim.model import builtin, dominated

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(capsys, n, name, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n:>2} {name:<28} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {n} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    cfg = experiments.load_experiment(CONFIGS / "desk.json", mode="sweep-M",
                                      out=str(tmp_path_factory.mktemp("desk")))
    t0 = time.perf_counter()
    summary = experiments.run(cfg)
    summary["_runtime"] = time.perf_counter() - t0
    summary["_results"] = (cfg.output / "results.csv").read_text()
    summary["_cfg"] = cfg
    return summary


@pytest.fixture(scope="module")
def delta(tmp_path_factory):
    cfg = experiments.load_experiment(CONFIGS / "delta_chain.json", mode="dfiap-validate",
                                      out=str(tmp_path_factory.mktemp("delta")))
    t0 = time.perf_counter()
    summary = experiments.run(cfg)
    summary["_runtime"] = time.perf_counter() - t0
    return summary


class TestAcceptance:
    def test_01_rate_exponent(self, desk, capsys):
        cfg = desk["_cfg"]
        assert cfg.M_list == [5, 10, 20, 40, 80, 160] and cfg.n_paths == 20_000
        assert cfg.spec.K == 2 and cfg.spec.horizon == 2.0
        assert ",tv_arrivals," in desk["_results"] and "tv_arrivals_binned" not in desk["_results"]
        c = desk["checks"]["rate_exponent"]
        ok = -0.8 <= c["slope"] <= -0.2 and c["residual_rms"] < 0.25
        report(capsys, 1, "rate_exponent", ok,
               f"slope={c['slope']:.3f} rms={c['residual_rms']:.3f} sweep={desk['_runtime']:.0f}s")

    def test_02_intensity_tv_decay(self, desk, capsys):
        c = desk["checks"]["intensity_tv_decay"]
        ok = c["monotone"] and c["factor"] >= 3.0
        vals = " ".join(f"{v:.4f}" for v in c["values"])
        report(capsys, 2, "intensity_tv_decay", ok,
               f"monotone={c['monotone']} factor={c['factor']:.2f} tv=[{vals}]")

    def test_03_independence(self, desk, capsys):
        c = desk["checks"]["independence"]
        gaps = c["replica_gap"]
        ph_ok = c["ph_gap"] <= 3 * c["ph_gap_stderr"] and c["ph_paths"] >= 100_000
        g10, g160 = gaps[10], gaps[160]
        decay = g160 < 0.5 * g10
        report(capsys, 3, "independence", ph_ok and decay,
               f"ph_gap={c['ph_gap']:.2e}±{c['ph_gap_stderr']:.1e} replica_gap M=10:{g10:.2e} M=160:{g160:.2e}")

    def test_04_tlln(self, desk, capsys):
        c = desk["checks"]["tlln"]
        assert c["M"] == [10, 40, 160]
        ok = len(c["ratios"]) == 2 and all(0.35 <= r <= 0.75 for r in c["ratios"])
        report(capsys, 4, "tlln", ok, "ratios=" + " ".join(f"{r:.3f}" for r in c["ratios"]))

    def test_05_delta_chain_kernel(self, delta, capsys):
        t = delta["transitions"]
        ok = t["max_z"] <= 3.0 and t["normalization_error"] <= 1e-12 and delta["_runtime"] < 120
        report(capsys, 5, "delta_chain_kernel", ok,
               f"max_abs_err={t['max_abs_error']:.2e} max_z={t['max_z']:.2f} "
               f"norm_err={t['normalization_error']:.1e} runtime={delta['_runtime']:.0f}s")

    def test_06_fiap_membership(self, delta, capsys):
        k = delta["fiap_kernel"]
        # every coordinate, every relevant state on 0..20
        ok = k["max_abs_diff"] <= 1e-12 and k["max_state"] == 20 and k["n_states"] == 6 * 21 ** 3
        report(capsys, 6, "fiap_membership", ok,
               f"max_abs_diff={k['max_abs_diff']:.1e} over {k['n_states']} states")

    def test_07_generator_reconstruction(self, delta, capsys):
        g = delta["generator"]
        ok = len(g["ratios"]) == 2 and all(0.3 <= r <= 0.7 for r in g["ratios"])
        report(capsys, 7, "generator_reconstruction", ok,
               "ratios=" + " ".join(f"{r:.3f}" for r in g["ratios"]))

    def test_08_moment_bound(self, capsys):
        spec = dominated(builtin("gl_excitatory", K=2, horizon=1.0, mu=1.0))
        assert spec.H == 1.0
        M, n = 10, 10_000
        out = rmf.rmf_batch(spec, M, n, 808, [0.0, 1.0])
        lam0 = out["lam_obs"][:, 0].mean(axis=(1, 2))
        lamT = out["lam_obs"][:, 1].mean(axis=(1, 2))
        mc = stats.moment_check(lamT, 1, init_mean=float(lam0.mean()), K=2, H=1.0, t=1.0,
                                dominated=True)
        report(capsys, 8, "moment_bound", bool(mc.ok),
               f"E[lam(T)]={mc.empirical:.4f}±{mc.stderr:.4f} bound={mc.bound:.4f}")

    def test_09_fixed_point_consistency(self, desk, capsys):
        c = desk["checks"]["fixed_point_consistency"]
        ok = c["M"] == 400 and c["coverage"] >= 0.95 and desk["fixed_point"]["converged"]
        report(capsys, 9, "fixed_point_consistency", ok,
               f"coverage={c['coverage']:.3f} over {c['n_cells']} cells, "
               f"fixed point in {desk['fixed_point']['iterations']} iterations")

    def test_10_determinism(self, tmp_path, capsys):
        from test_cli import SMALL

        diffs = []
        for mode, cfg in SMALL.items():
            p = tmp_path / f"{mode}.json"
            p.write_text(json.dumps(cfg))
            snaps = []
            for rep in ("a", "b"):
                out = tmp_path / mode / rep
                assert main([mode, "--config", str(p), "--out", str(out)]) == 0
                snaps.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
            if snaps[0] != snaps[1]:
                diffs.append(mode)
        capsys.readouterr()
        report(capsys, 10, "determinism", not diffs,
               f"modes rerun: {len(SMALL)}, differing: {diffs or 'none'}")
