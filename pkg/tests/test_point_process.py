"""Random streams, thinning and drift integration."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from fiapsim.point_process import (
    AffineDrift, IntensityPath, RK4Drift, RngStream, ThinningBoundError, affine_advance,
    affine_integral, integrate_drift, next_event_thinning,
)
from fiapsim.point_process.rng import GAMMA, mix64, stream_key


class TestRngStream:
    def test_mix64_matches_reference_splitmix(self):
        # first output of the reference SplitMix64 generator seeded with 0
        assert mix64(GAMMA) == 0xE220A8397B1DCDAF

    def test_same_id_same_sequence(self):
        a = RngStream(7, (1, 2, 3))
        b = RngStream(7, (1, 2, 3))
        assert [a.uniform() for _ in range(100)] == [b.uniform() for _ in range(100)]

    def test_distinct_ids_uncorrelated(self):
        n = 100_000
        x = RngStream(7, (0, 0, 0, 0)).uniforms(n)
        y = RngStream(7, (0, 1, 0, 0)).uniforms(n)
        assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(n)

    def test_uniform_range_and_moments(self):
        u = RngStream(3, (5,)).uniforms(50_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert stats.kstest(u, "uniform").pvalue > 0.01

    def test_exponential_law(self):
        s = RngStream(11, (2,))
        e = np.array([s.exponential() for _ in range(20_000)])
        assert stats.kstest(e, "expon").pvalue > 0.01

    def test_key_depends_on_every_id(self):
        keys = {stream_key(1, a, b) for a in range(5) for b in range(5)}
        assert len(keys) == 25

    def test_numpy_generator_reproducible(self):
        a = RngStream(9, (1, 2)).numpy().random(5)
        b = RngStream(9, (1, 2)).numpy().random(5)
        assert np.array_equal(a, b)


def _count(intensity, bound, t0, t1, rng):
    n, t = 0, t0
    while True:
        t = next_event_thinning(intensity, bound, (t, t1), rng)
        if t is None:
            return n
        n += 1


class TestThinning:
    def test_zero_intensity_gives_none(self):
        rng = RngStream(0, (0,))
        assert next_event_thinning(lambda t: 0.0, 0.0, (0.0, 5.0), rng) is None
        assert next_event_thinning(lambda t: 0.0, 2.0, (0.0, 5.0), rng) is None

    def test_constant_rate_count_is_poisson(self):
        lam, n = 3.0, 100_000
        rng = RngStream(1, (0,))
        counts = np.array([_count(lambda t: lam, lam, 0.0, 1.0, rng) for _ in range(n)])
        assert abs(counts.mean() - lam) < 3 * math.sqrt(lam / n)
        kmax = 10
        obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
        p = stats.poisson.pmf(np.arange(kmax), lam)
        exp = n * np.append(p, 1 - p.sum())
        assert stats.chisquare(obs, exp).pvalue > 0.01

    def test_disjoint_intervals_independent_poisson(self):
        lam, n = 2.0, 100_000
        rng = RngStream(2, (0,))
        a = np.empty(n, dtype=int)
        b = np.empty(n, dtype=int)
        for k in range(n):
            times, t = [], 0.0
            while (t := next_event_thinning(lambda s: lam, lam, (t, 2.0), rng)) is not None:
                times.append(t)
            times = np.array(times)
            a[k] = np.count_nonzero(times <= 1.0)
            b[k] = times.size - a[k]
        kmax = 8
        p = stats.poisson.pmf(np.arange(kmax), lam)
        exp = n * np.append(p, 1 - p.sum())
        for c in (a, b):
            obs = np.bincount(np.minimum(c, kmax), minlength=kmax + 1)
            assert stats.chisquare(obs, exp).pvalue > 0.01
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(n)

    def test_thinned_matches_direct(self):
        lam = 4.0
        r1, r2 = RngStream(3, (0,)), RngStream(3, (1,))
        t, thinned = 0.0, []
        while len(thinned) < 10_000:
            t = next_event_thinning(lambda s: lam / 2, lam, (t, math.inf), r1)
            thinned.append(t)
        direct = np.array([r2.exponential() / (lam / 2) for _ in range(10_000)])
        gaps = np.diff(np.concatenate([[0.0], thinned]))
        assert stats.ks_2samp(gaps, direct).pvalue > 0.05

    def test_bound_violation_raises(self):
        rng = RngStream(4, (0,))
        with pytest.raises(ThinningBoundError):
            _count(lambda t: 5.0, 1.0, 0.0, 50.0, rng)

    def test_zero_bound_with_positive_intensity_raises(self):
        with pytest.raises(ThinningBoundError):
            next_event_thinning(lambda t: 1.0, 0.0, (0.0, 1.0), RngStream(0, (0,)))

    def test_negative_intensity_is_clamped(self):
        rng = RngStream(5, (0,))
        assert _count(lambda t: -3.0, 1.0, 0.0, 20.0, rng) == 0


class TestIntensityPath:
    def test_right_continuous(self):
        p = IntensityPath()
        p.append(0.0, lambda s: 1.0 + s)
        p.append(1.0, lambda s: 5.0)
        assert p(0.999) == pytest.approx(1.999)
        assert p(1.0) == 5.0

    def test_clamps_negative(self):
        p = IntensityPath([(0.0, lambda s: -1.0)])
        assert p(0.5) == 0.0
        assert IntensityPath([(0.0, lambda s: -1.0)], clamp=False)(0.5) == -1.0

    def test_out_of_order_append_rejected(self):
        p = IntensityPath([(1.0, lambda s: 1.0)])
        with pytest.raises(ValueError):
            p.append(0.5, lambda s: 1.0)


class TestDrift:
    def test_identity_drift(self):
        assert integrate_drift(3.0, lambda s, lam: 0.0, 0.0, 7.0) == 3.0
        assert AffineDrift(0.0, 0.0).advance(3.0, 0.0, 7.0) == 3.0

    def test_gl_relaxation_closed_form(self):
        # dλ/ds = b - λ with b = 1, λ0 = 2 over one unit: 1 + e^{-1}
        assert AffineDrift(1.0, -1.0).advance(2.0, 0.0, 1.0) == pytest.approx(1 + math.exp(-1), abs=1e-15)
        assert integrate_drift(2.0, lambda s, lam: 1.0 - lam, 0.0, 1.0) == pytest.approx(
            1 + math.exp(-1), abs=1e-12)

    def test_rk4_integral_matches_closed_form(self):
        rk = RK4Drift(lambda s, lam: 1.0 - lam)
        assert rk.integral(2.0, 0.0, 1.5) == pytest.approx(affine_integral(1.0, -1.0, 2.0, 1.5), abs=1e-10)

    @given(lam0=st.floats(0, 50), dt=st.floats(0, 5))
    def test_monotone_drift_never_increases(self, lam0, dt):
        # σ(λ) = λ/2 ≤ λ, so the intensity can only decrease between events
        assert AffineDrift(0.0, -0.5).advance(lam0, 0.0, dt) <= lam0

    @given(a=st.floats(-3, 3), c=st.floats(-2, 2), lam=st.floats(-5, 5),
           d1=st.floats(0, 1.5), d2=st.floats(0, 1.5))
    def test_affine_flow_semigroup(self, a, c, lam, d1, d2):
        one = affine_advance(a, c, affine_advance(a, c, lam, d1), d2)
        both = affine_advance(a, c, lam, d1 + d2)
        assert one == pytest.approx(both, rel=1e-9, abs=1e-9)

    @settings(max_examples=50)
    @given(a=st.floats(-3, 3), c=st.floats(-2, 2), lam=st.floats(-5, 5), dt=st.floats(0, 2))
    def test_affine_integral_against_quadrature(self, a, c, lam, dt):
        ref, _ = integrate.quad(lambda s: affine_advance(a, c, lam, s), 0.0, dt)
        assert affine_integral(a, c, lam, dt) == pytest.approx(ref, rel=1e-8, abs=1e-10)

    def test_sup_over_window(self):
        d = AffineDrift(1.0, -1.0)
        assert d.sup_over(3.0, 2.0) == 3.0
        assert d.sup_over(0.0, 2.0) == pytest.approx(d.advance(0.0, 0.0, 2.0))

    def test_backward_interval_rejected(self):
        with pytest.raises(ValueError):
            integrate_drift(1.0, lambda s, lam: 0.0, 1.0, 0.0)
