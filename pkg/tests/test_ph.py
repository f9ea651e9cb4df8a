"""Poisson-Hypothesis dynamics, the mean-rate map and its fixed point."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from fiapsim import ph, rmf, stats
from fiapsim.model import builtin
from fiapsim.ph import RateFunction


class TestRateFunction:
    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            RateFunction(1.0, np.array([[1.0, -0.1]]))
        with pytest.raises(ValueError):
            RateFunction(1.0, np.array([[1.0, np.nan]]))
        with pytest.raises(ValueError):
            RateFunction(0.0, np.ones((1, 3)))

    @given(vals=st.lists(st.floats(0, 10), min_size=1, max_size=20), t=st.floats(0, 3))
    def test_integral_is_left_riemann_sum(self, vals, t):
        rf = RateFunction(2.0, np.array([vals]))
        dt = 2.0 / len(vals)
        tt = min(t, 2.0)
        ref = sum(v * max(0.0, min(tt, (c + 1) * dt) - c * dt) for c, v in enumerate(vals))
        assert rf.integral(0, t) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_call_left_constant(self):
        rf = RateFunction(2.0, np.array([[1.0, 3.0]]))
        assert rf(0, 0.0) == 1.0 and rf(0, 0.999) == 1.0 and rf(0, 1.0) == 3.0 and rf(0, 2.0) == 3.0

    def test_csv_round_trip(self):
        rf = RateFunction(2.0, np.arange(12, dtype=float).reshape(2, 6) / 7)
        text = rf.to_csv()
        assert text.splitlines()[0] == "node,cell_start,rate"
        back = RateFunction.from_csv(text, 2.0)
        assert back.horizon == rf.horizon and np.array_equal(back.values, rf.values)

    def test_grid_shorter_than_horizon(self, gl2):
        with pytest.raises(ValueError, match="horizon"):
            ph.simulate_ph(gl2, RateFunction.constant(2, 1.0, 1.0), 10, 0)


class TestSimulatePH:
    def test_single_node_matches_rmf_law(self):
        spec = builtin("gl_excitatory", K=1, b=2.0, init={"kind": "uniform", "low": 0, "high": 3})
        n = 20_000
        a = ph.simulate_ph(spec, RateFunction.constant(1, 0.0, 2.0), n, 1)
        b = rmf.rmf_batch(spec, 2, n, 2, [2.0])
        assert np.all(a["arrivals"] == 0)
        assert sps.ks_2samp(a["lam"][:, 0, 0], b["lam_obs"][:, 0, 0, 0]).pvalue > 0.001
        assert sps.ks_2samp(a["departures"][:, 0, 0], b["dep_obs"][:, 0, 0, 0]).pvalue > 0.001

    def test_constant_rates_give_poisson_arrivals(self):
        K, rbar, T, n = 3, 0.7, 2.0, 100_000
        spec = builtin("gl_excitatory", K=K, horizon=T)
        out = ph.simulate_ph(spec, RateFunction.constant(K, rbar, T, 10), n, 3)
        A = out["arrivals"][:, 0, 0].astype(int)
        lam = (K - 1) * rbar * T
        kmax = 10
        obs = np.bincount(np.minimum(A, kmax), minlength=kmax + 1)
        p = sps.poisson.pmf(np.arange(kmax), lam)
        assert sps.chisquare(obs, n * np.append(p, 1 - p.sum())).pvalue > 0.01

    def test_nodes_independent(self, gl2):
        n = 100_000
        out = ph.simulate_ph(gl2, RateFunction.constant(2, 1.3, 2.0), n, 4)
        r = np.corrcoef(out["lam"][:, 0, 0], out["lam"][:, 0, 1])[0, 1]
        assert abs(r) < 3 / math.sqrt(n)

    def test_node_relabel_permutes_outputs(self):
        spec = builtin("gordon_newell", K=3)
        rf = RateFunction.constant(3, 0.8, spec.horizon, 5)
        base = ph.ph_batch(spec, rf, 30, 5, [1.0, 2.0], engine="python")
        perm = [1, 2, 0]
        moved = ph.ph_batch(spec, rf, 30, 5, [1.0, 2.0], engine="python", node_labels=perm)
        # node i of the relabelled run consumed node perm[i]'s streams; the wiring is cyclic too
        for i in range(3):
            assert np.array_equal(moved["lam_obs"][..., i], base["lam_obs"][..., perm[i]])
            assert np.array_equal(moved["arr_obs"][..., i], base["arr_obs"][..., perm[i]])


class TestPhi:
    def test_zero_input_gl_stays_at_one(self, gl2):
        out = ph.phi_iterate(gl2, RateFunction.constant(2, 0.0, 2.0, 20), 500, 0)
        assert np.allclose(out.values, 1.0, rtol=0, atol=1e-12)

    def test_deterministic(self, gl2):
        rin = RateFunction.constant(2, 1.2, 2.0, 20)
        a = ph.phi_iterate(gl2, rin, 2000, 9)
        b = ph.phi_iterate(gl2, rin, 2000, 9)
        assert a.values.tobytes() == b.values.tobytes()

    def test_single_node_ignores_input(self):
        spec = builtin("gl_excitatory", K=1, b=2.0)
        a = ph.phi_iterate(spec, RateFunction.constant(1, 0.0, 2.0, 10), 3000, 1)
        b = ph.phi_iterate(spec, RateFunction.constant(1, 5.0, 2.0, 10), 3000, 1)
        assert a.values.tobytes() == b.values.tobytes()

    def test_zero_paths(self, gl2):
        with pytest.raises(ValueError):
            ph.phi_iterate(gl2, RateFunction.constant(2, 1.0, 2.0), 0, 0)

    def test_nonnegative_for_signed_weights(self):
        spec = builtin("gl_inhibitory", K=2, mu=[[0, -3], [-3, 0]], b=0.2)
        out = ph.phi_iterate(spec, RateFunction.constant(2, 2.0, 2.0, 10), 500, 0)
        assert np.all(out.values >= 0)


class TestFixedPoint:
    def test_single_node_one_iteration(self):
        res = ph.solve_fixed_point(builtin("gl_excitatory", K=1), n_cells=10, n_paths=1000)
        assert res.converged and res.iterations == 1

    def test_gl_converges_below_noise(self, gl2):
        res = ph.solve_fixed_point(gl2, n_cells=40, n_paths=20_000, seed=3)
        assert res.converged
        assert res.deltas[-1] < 2 * res.noise_floors[-1] + 1e-3
        assert res.deltas[0] > res.deltas[-1]
        lines = res.diagnostics_csv().splitlines()
        assert lines[0] == "iteration,sup_delta,noise_floor"
        assert len(lines) == res.iterations + 1

    def test_gordon_newell_symmetric(self):
        res = ph.solve_fixed_point(builtin("gordon_newell", K=3), n_cells=20, n_paths=20_000, seed=1)
        v, se = res.rates.values, res.rates.stderr
        for a, b in [(0, 1), (1, 2), (0, 2)]:
            z = np.abs(v[a] - v[b]) / np.sqrt(se[a] ** 2 + se[b] ** 2)
            assert np.mean(z <= 3) >= 0.9

    def test_nonconvergence_is_flagged(self, gl2):
        res = ph.solve_fixed_point(gl2, n_cells=10, n_paths=200, max_iter=1, seed=0)
        assert not res.converged and res.iterations == 1

    def test_bad_tol(self, gl2):
        with pytest.raises(ValueError):
            ph.solve_fixed_point(gl2, tol=0.0)


class TestExactArrivalPmf:
    def test_constant_rates_poisson(self):
        spec = builtin("gl_excitatory", K=3)
        rf = RateFunction.constant(3, [0.5, 0.7, 1.1], 2.0, 8)
        pm = ph.ph_arrival_pmf_exact(spec, rf, 0, 1.5)
        lam = (0.7 + 1.1) * 1.5
        assert np.allclose(pm.probs, sps.poisson.pmf(pm.support, lam), atol=1e-14)
        assert abs(pm.probs.sum() - 1) < 1e-12

    def test_integer_weights_scale_support(self):
        spec = builtin("gl_excitatory", K=2, mu=2.0)
        pm = ph.ph_arrival_pmf_exact(spec, RateFunction.constant(2, 1.0, 2.0), 0, 2.0)
        assert np.all(pm.support % 2 == 0)
        assert pm[4] == pytest.approx(sps.poisson.pmf(2, 2.0), rel=1e-12)

    def test_matches_simulation(self, gl2):
        rf = RateFunction(2.0, np.vstack([np.linspace(0.8, 1.6, 10)] * 2))
        pm = ph.ph_arrival_pmf_exact(gl2, rf, 1, 2.0)
        A = ph.simulate_ph(gl2, rf, 50_000, 7)["arrivals"][:, 0, 1]
        tv, se = stats.tv_discrete_clustered(A, pm)
        assert tv < 3 * se + 0.01

    def test_noninteger_kernel_rejected(self):
        spec = builtin("gl_excitatory", K=2, mu=0.5)
        with pytest.raises(ValueError):
            ph.ph_arrival_pmf_exact(spec, RateFunction.constant(2, 1.0, 2.0), 0, 1.0)
