"""Model specs, builtin examples, config round trips, validation and the expression grammar."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from fiapsim import rmf
from fiapsim.expr import Expr, ExprError
from fiapsim.model import (
    BUILTINS, ConfigError, InitLaw, builtin, dominated, driftless, dump_config, from_config,
    load_config, validate,
)
from fiapsim.point_process import AffineDrift, RK4Drift


class TestBuiltins:
    def test_gl_excitatory_shape(self, gl2):
        assert gl2.H == 1.0
        assert gl2.f.source == "abs(x)"
        km = gl2.kernel_model()
        assert np.array_equal(km.h, [[0, 1], [1, 0]])
        assert km.f_kind == 0
        assert np.array_equal(km.g_val, [1.0, 1.0])

    def test_gordon_newell_cyclic_successor(self):
        spec = builtin("gordon_newell", K=3)
        h = spec.h_const()
        expect = np.array([[1.0 if j == (i + 1) % 3 else 0.0 for i in range(3)] for j in range(3)])
        assert np.array_equal(h, expect)
        assert spec.g[0](0.0, 4.0) == 3.0

    def test_inhibitory_uses_relu(self):
        spec = builtin("gl_inhibitory", K=2, mu=[[0, -1], [1, 0]])
        assert spec.f(-2.0) == 0.0 and spec.f(2.0) == 2.0
        assert spec.kernel_model().f_kind == 1

    def test_inhibitory_with_nonnegative_weights_matches_excitatory(self):
        kw = dict(K=3, mu=0.7, r=1.0, b=0.5)
        _, a = rmf.simulate_rmf(builtin("gl_excitatory", **kw), 4, 99)
        _, b = rmf.simulate_rmf(builtin("gl_inhibitory", **kw), 4, 99)
        assert a.to_csv() == b.to_csv()

    def test_excitatory_rejects_negative_weights(self):
        with pytest.raises(ConfigError):
            builtin("gl_excitatory", K=2, mu=-1.0)

    def test_unknown_name_and_params(self):
        with pytest.raises(ConfigError):
            builtin("hawkes")
        with pytest.raises(ConfigError):
            builtin("gl_excitatory", nu=1.0)
        with pytest.raises(ConfigError):
            builtin("gordon_newell", K=3, mu=1.0)

    def test_finite_tau_relaxation(self):
        spec = builtin("gl_excitatory", K=2, b=2.0, tau=4.0)
        d = spec.drift(0)
        assert isinstance(d, AffineDrift)
        # dλ/ds = (b - λ)/τ
        assert d.velocity(0.0, 1.0) == pytest.approx(0.25)

    def test_variants(self, gl2):
        dom = dominated(gl2)
        assert dom.g[0](0.0, 3.0) == 3.0 and dom.sigma[0](0.0, 3.0) == 3.0
        free = driftless(gl2)
        assert free.g[0](0.0, 3.0) == 1.0 and free.sigma[0](0.0, 3.0) == 3.0


class TestConfig:
    @pytest.mark.parametrize("name", BUILTINS)
    def test_builtin_round_trip(self, name, tmp_path):
        spec = builtin(name, K=3)
        p = tmp_path / "m.json"
        p.write_text(dump_config(spec))
        back = from_config(load_config(p))
        assert back == spec
        assert dump_config(back) == dump_config(spec)

    @settings(max_examples=30, deadline=None)
    @given(mu=st.floats(0, 5), r=st.floats(0, 5), b=st.floats(0, 5), K=st.integers(1, 4),
           horizon=st.floats(0.1, 10))
    def test_gl_round_trip_bit_exact(self, mu, r, b, K, horizon):
        spec = builtin("gl_excitatory", K=K, mu=mu, r=r, b=b, horizon=horizon)
        text = json.dumps(spec.to_config())
        back = from_config(json.loads(text))
        assert back == spec
        assert back.kernel_model().h.tobytes() == spec.kernel_model().h.tobytes()

    def test_parse_error_names_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "K": 2,\n  "horizon": 1.0,,\n}')
        with pytest.raises(ConfigError, match="line 3"):
            load_config(p)

    def test_missing_fields(self):
        with pytest.raises(ConfigError, match="horizon"):
            from_config({"K": 2, "example": "gl_excitatory"})
        with pytest.raises(ConfigError, match="example"):
            from_config({"K": 2, "horizon": 1.0})

    def test_custom_model(self):
        cfg = {"K": 2, "horizon": 1.0, "custom": {
            "h_matrix": [["0", "1 + 0.5*t"], ["0.5", "0"]], "H": 1.5, "f": "max(0, x)",
            "g": "0.5*lam", "sigma": "lam - 0.1*lam*lam"}, "init": 1.0}
        spec = from_config(cfg)
        assert spec.h_value(0, 1, 1.0) == 1.5
        assert spec.kernel_model() is None
        assert isinstance(spec.drift(0), RK4Drift)
        assert from_config(spec.to_config()) == spec

    def test_bad_expression_is_config_error(self):
        cfg = {"K": 1, "horizon": 1.0, "custom": {
            "h_matrix": [["0"]], "H": 0, "f": "x ** 2", "g": "lam", "sigma": "lam"}}
        with pytest.raises(ConfigError, match="bad expression"):
            from_config(cfg)

    def test_unknown_variant(self, gl2):
        cfg = gl2.to_config()
        cfg["variant"] = "frozen"
        with pytest.raises(ConfigError):
            from_config(cfg)


class TestValidate:
    def test_gl_excitatory_findings(self, gl2):
        rep = validate(gl2)
        assert rep.status("h_bounded") == "pass"
        assert rep.status("f_zero") == "pass"
        assert rep.status("assumption_monotone") == "warn"
        assert rep.ok

    def test_shifted_f_fails(self):
        cfg = {"K": 2, "horizon": 1.0, "custom": {
            "h_matrix": [["0", "1"], ["1", "0"]], "H": 1, "f": "x + 1", "g": "lam", "sigma": "lam"}}
        rep = validate(from_config(cfg))
        assert rep.status("f_zero") == "fail"
        assert not rep.ok

    def test_gordon_newell_passes_with_note(self):
        rep = validate(builtin("gordon_newell", K=3))
        assert all(f.status == "pass" for f in rep.findings)
        assert "lam >= 1" in next(f.detail for f in rep.findings if f.check == "g_nonnegative[0]")

    def test_understated_bound_fails(self):
        cfg = {"K": 2, "horizon": 1.0, "custom": {
            "h_matrix": [["0", "2"], ["2", "0"]], "H": 1, "f": "abs(x)", "g": "lam", "sigma": "lam"}}
        assert validate(from_config(cfg)).status("h_bounded") == "fail"

    def test_signed_weights_warn_about_clamp(self):
        rep = validate(builtin("gl_inhibitory", K=2, mu=[[0, -1], [1, 0]]))
        assert rep.status("rate_clamp") == "warn"

    def test_nonaffine_drift_without_bound(self):
        cfg = {"K": 1, "horizon": 1.0, "custom": {
            "h_matrix": [["0"]], "H": 0, "f": "abs(x)", "g": "lam", "sigma": "lam + exp(-lam)"}}
        assert validate(from_config(cfg)).status("rate_bound") == "fail"

    def test_deterministic_and_pure(self, gl2):
        before = gl2.to_config()
        assert validate(gl2).lines() == validate(gl2).lines()
        assert gl2.to_config() == before


class TestInitLaw:
    def test_truncexp_inverse_cdf(self):
        law = InitLaw("truncexp", (2.0, 1.5))
        u = np.linspace(0.001, 0.999, 50)
        ref = stats.truncexpon(b=3.0, scale=0.5).ppf(u)
        assert np.allclose([law.sample(x) for x in u], ref, rtol=1e-12)

    @pytest.mark.parametrize("law", [InitLaw("truncexp", (2.0, 1.5)), InitLaw("uniform", (0.5, 3.0)),
                                     InitLaw.constant(2.0)])
    def test_mean_and_exp_moment(self, law):
        qs = np.linspace(0, 1, 200001)
        xs = np.array([law.sample(u) for u in qs[1:-1]])
        assert law.mean() == pytest.approx(xs.mean(), rel=1e-4)
        assert law.exp_moment(0.7) == pytest.approx(np.exp(0.7 * xs).mean(), rel=1e-4)
        assert math.isfinite(law.exp_moment(5.0))

    def test_invalid_laws(self):
        with pytest.raises(ConfigError):
            InitLaw("uniform", (2.0, 1.0))
        with pytest.raises(ConfigError):
            InitLaw.from_config({"kind": "gamma", "shape": 2})
        with pytest.raises(ConfigError):
            InitLaw.from_config({"kind": "uniform", "low": 0})


class TestExpr:
    @pytest.mark.parametrize("src", ["__import__('os')", "x ** 2", "x / 2", "x.real", "lambda: 1",
                                     "y + 1", "max(x)", "abs(x, 1)", "[x]", "'a'", "True"])
    def test_rejects(self, src):
        with pytest.raises(ExprError):
            Expr(src, ("x",))

    def test_evaluates(self):
        e = Expr("max(0, 2*x - 1) + exp(0) - abs(-x) * min(x, 3)", ("x",))
        assert e(2.0) == pytest.approx(3 + 1 - 4)

    def test_affine_detection(self):
        assert Expr("3 - 2*lam", ("t", "lam")).affine_in("lam") == (3.0, -2.0)
        assert Expr("lam + (1.0 - lam) * 0.5", ("t", "lam")).affine_in("lam") == (0.5, 0.5)
        assert Expr("lam * lam", ("t", "lam")).affine_in("lam") is None
        assert Expr("t + lam", ("t", "lam")).affine_in("lam") is None

    def test_kind_detection(self):
        assert Expr("abs(x)", ("x",)).kind == "abs"
        assert Expr("max(0, abs(x))", ("x",)).kind == "abs"
        assert Expr("max(x, 0)", ("x",)).kind == "relu"
        assert Expr("2*x", ("x",)).kind is None

    def test_constant(self):
        assert Expr("2 * 3 - 1", ("t",)).constant == 5.0
        assert Expr("t", ("t",)).constant is None
