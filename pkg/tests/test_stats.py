"""Distances, concentration statistics, slope fits and moment checks."""
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiapsim import stats
from fiapsim.stats import EmpiricalPmf, Pmf


def random_pmf(rng, n):
    p = rng.random(n) * (rng.random(n) < 0.7)
    p[rng.integers(n)] += 0.1
    return Pmf.from_dense(p / p.sum())


class TestPmf:
    def test_validation(self):
        with pytest.raises(ValueError):
            Pmf.from_dict({0: 0.5, 1: 0.4})
        with pytest.raises(ValueError):
            Pmf.from_dict({0: 1.1, 1: -0.1})

    def test_accessors(self):
        p = Pmf.from_dense(np.array([0.0, 0.25, 0.75]), offset=2)
        assert p.support.tolist() == [3, 4]
        assert p[4] == 0.75 and p[2] == 0.0 and p[99] == 0.0
        assert p.mean() == pytest.approx(3.75)

    def test_empirical(self):
        e = EmpiricalPmf.from_samples([1, 1, 3, 1])
        assert e.n == 4 and e.to_pmf().as_dict() == {1: 0.75, 3: 0.25}
        with pytest.raises(ValueError):
            EmpiricalPmf.from_samples([0.5])
        with pytest.raises(ValueError):
            EmpiricalPmf.from_samples([])


class TestTV:
    def test_examples(self):
        assert stats.tv_discrete({0: 1.0}, {1: 1.0}) == 1.0
        assert stats.tv_discrete({0: 0.5, 1: 0.5}, {0: 0.25, 1: 0.75}) == 0.25
        assert stats.tv_discrete({0: 0.5, 2: 0.5}, {0: 0.5, 2: 0.5}) == 0.0

    def test_metric_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p, q, r = (random_pmf(rng, 6) for _ in range(3))
            pq = stats.tv_discrete(p, q)
            assert 0 <= pq <= 1
            assert pq == stats.tv_discrete(q, p)
            assert stats.tv_discrete(p, p) == 0
            assert pq <= stats.tv_discrete(p, r) + stats.tv_discrete(r, q) + 1e-15

    def test_binned_extremes(self):
        x = np.random.default_rng(1).normal(size=1000)
        assert stats.tv_binned(x, x.copy()) == 0.0
        assert stats.tv_binned(x, x + 100.0) == 1.0
        with pytest.raises(ValueError):
            stats.tv_binned(x, np.array([]))

    def test_equal_mass_edges_merge_ties(self):
        x = np.r_[np.ones(600), np.linspace(2, 3, 400)]
        edges = stats.equal_mass_edges(x, 10)
        assert np.all(np.diff(edges) > 0)
        assert edges.size < 9

    def test_clustered_discrete_unbiased_draws(self):
        q = Pmf.from_dict({0: 0.2, 1: 0.5, 2: 0.3})
        s = np.random.default_rng(2).choice(3, p=q.probs, size=20_000)
        tv, se = stats.tv_discrete_clustered(s, q)
        assert tv < 4 * se + 0.005 and se > 0

    def test_cluster_stderr_reflects_dependence(self):
        q = Pmf.from_dict({0: 0.5, 1: 0.5})
        rng = np.random.default_rng(3)
        ind = rng.integers(0, 2, size=(4000, 2))
        dup = np.repeat(rng.integers(0, 2, size=(4000, 1)), 2, axis=1)
        _, se_ind = stats.tv_discrete_clustered(ind, q, n_boot=400)
        _, se_dup = stats.tv_discrete_clustered(dup, q, n_boot=400)
        assert se_dup > 1.2 * se_ind

    def test_binned_clustered_report(self):
        rng = np.random.default_rng(4)
        out = stats.tv_binned_clustered(rng.exponential(size=(2000, 3)), rng.exponential(size=8000),
                                        n_bins=16, n_boot=200)
        assert set(out) == {"tv", "stderr", "tv_half_bins", "tv_double_bins", "n_bins_effective"}
        assert out["n_bins_effective"] == 16 and out["tv"] < 0.05


class TestTLLN:
    def test_constant_counts(self):
        est, se = stats.tlln_deviation(np.full((50, 8), 3.0))
        assert est == 0.0 and se == 0.0

    def test_poisson_closed_form(self):
        lam, M = 4.0, 20
        counts = np.random.default_rng(5).poisson(lam, size=(20_000, M))
        est, se = stats.tlln_deviation(counts)
        ref = math.sqrt(2 * lam / math.pi) * math.sqrt(M) / (M - 1)
        assert abs(est - ref) < 4 * se + 0.01 * ref

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            stats.tlln_deviation(np.ones(10))
        with pytest.raises(ValueError):
            stats.tlln_deviation(np.ones((10, 1)))

    def test_chen_stein_deterministic(self):
        # no fluctuation term; second term min(1, 1/2) * 2 / 4
        assert stats.chen_stein_rhs(np.full((10, 5), 2.0)) == pytest.approx(0.25)
        assert stats.chen_stein_rhs(np.zeros((10, 5))) == 0.0


class TestIndependenceGap:
    def test_identical_variables(self):
        x = np.random.default_rng(6).random(4000)
        gap, _ = stats.independence_gap(x, x, bins=4, n_boot=200)
        assert gap == pytest.approx(3 / 16)

    def test_independent_draws(self):
        rng = np.random.default_rng(7)
        gap, se = stats.independence_gap(rng.random(50_000), rng.random(50_000), n_boot=200)
        assert gap < 4 * se + 0.003

    def test_clustered_input(self):
        rng = np.random.default_rng(8)
        x, y = rng.random((2000, 5)), rng.random((2000, 5))
        gap, se = stats.independence_gap(x, y, n_boot=200)
        assert gap < 4 * se + 0.005

    def test_errors(self):
        rng = np.random.default_rng(9)
        with pytest.raises(ValueError, match="degenerate"):
            stats.independence_gap(np.ones(2000), rng.random(2000))
        with pytest.raises(ValueError):
            stats.independence_gap(rng.random(100), rng.random(100))
        with pytest.raises(ValueError):
            stats.independence_gap(rng.random(2000), rng.random(1000))


class TestSlope:
    @given(st.sampled_from([-0.5, -1.0, -2.0]), st.floats(0.01, 100))
    @settings(max_examples=20)
    def test_exact_power_law(self, slope, c):
        M = np.array([5, 10, 20, 40, 80])
        fit = stats.loglog_slope(M, c * M.astype(float) ** slope)
        assert fit.slope == pytest.approx(slope, abs=1e-10)
        assert fit.constant == pytest.approx(c, rel=1e-9)
        assert fit.residual_rms < 1e-10

    def test_drops_nonpositive(self):
        with pytest.warns(UserWarning, match="dropping 1"):
            fit = stats.loglog_slope([5, 10, 20, 40], [0.2, 0.1, 0.0, 0.025])
        assert fit.log_M.size == 3
        with pytest.raises(ValueError), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            stats.loglog_slope([5, 10, 20], [0.2, 0.0, 0.05])


class TestMoments:
    def test_single_node_dominated(self):
        mc = stats.moment_check(np.full(100, 2.0), 1, init_mean=2.0, K=1, H=1.0, t=1.0, dominated=True)
        assert mc.bound == 2.0 and mc.ok

    def test_bound_only_for_first_moment(self):
        x = np.random.default_rng(10).exponential(size=1000)
        mc = stats.moment_check(x, 2, init_mean=1.0, K=2, H=1.0, t=1.0, dominated=True)
        assert mc.bound is None and mc.ok is None
        assert mc.empirical == pytest.approx(2.0, rel=0.2)
        assert stats.moment_check(x, 1, 1.0, 2, 1.0, 1.0).ok is None

    def test_exp_moment(self):
        x = np.random.default_rng(11).exponential(size=200_000)
        out = stats.exp_moment_stability(x, 0.3)
        assert out["finite"] and abs(out["full"] - 1 / 0.7) < 4 * out["stderr"]
        assert out["rel_change"] < 0.05
