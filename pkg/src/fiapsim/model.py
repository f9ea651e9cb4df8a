"""Model definitions: cFIAP specs, initial laws, built-in examples, validation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .expr import Expr, ExprError
from .point_process.rng import Purpose, RngStream
from .point_process.thinning import AffineDrift, Drift, RK4Drift

H_VARS = ("t",)
F_VARS = ("x",)
NODE_VARS = ("t", "lam")

BUILTINS = ("gl_excitatory", "gl_inhibitory", "gordon_newell")


class ConfigError(ValueError):
    """Malformed model or experiment configuration."""


# ---------------------------------------------------------------- init laws

@dataclass(frozen=True)
class InitLaw:
    """Law of one node's initial intensity. All kinds are bounded."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        n = {"constant": 1, "uniform": 2, "truncexp": 2}.get(self.kind)
        if n is None:
            raise ConfigError(f"unknown init kind {self.kind!r}")
        if len(self.params) != n:
            raise ConfigError(f"init kind {self.kind!r} takes {n} parameters")
        if self.kind == "uniform" and not self.params[0] <= self.params[1]:
            raise ConfigError("uniform init needs low <= high")
        if self.kind == "truncexp" and not (self.params[0] > 0 and self.params[1] > 0):
            raise ConfigError("truncexp init needs rate > 0 and upper > 0")
        if self.kind == "constant" and self.params[0] < 0:
            raise ConfigError("initial intensity must be >= 0")

    @classmethod
    def constant(cls, value: float) -> "InitLaw":
        return cls("constant", (float(value),))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def upper(self) -> float:
        return {"constant": self.params[0], "uniform": self.params[-1],
                "truncexp": self.params[-1]}[self.kind]

    def sample(self, u: float) -> float:
        """Inverse-CDF draw from a uniform ``u``."""
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * u
        rate, upper = self.params
        return -math.log1p(-u * -math.expm1(-rate * upper)) / rate

    def mean(self) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        rate, c = self.params
        z = -math.expm1(-rate * c)
        return (1.0 / rate) - c * math.exp(-rate * c) / z

    def exp_moment(self, xi: float) -> float:
        """E[exp(xi * Z)], finite for every xi since the law is bounded."""
        if self.kind == "constant":
            return math.exp(xi * self.params[0])
        if self.kind == "uniform":
            lo, hi = self.params
            if xi == 0 or hi == lo:
                return math.exp(xi * lo)
            return (math.exp(xi * hi) - math.exp(xi * lo)) / (xi * (hi - lo))
        rate, c = self.params
        z = -math.expm1(-rate * c)
        if abs(xi - rate) < 1e-12:
            return rate * c / z
        return rate * math.expm1((xi - rate) * c) / ((xi - rate) * z)

    def to_config(self) -> dict:
        keys = {"constant": ("value",), "uniform": ("low", "high"), "truncexp": ("rate", "upper")}
        return {"kind": self.kind, **dict(zip(keys[self.kind], self.params))}

    @classmethod
    def from_config(cls, d: Any) -> "InitLaw":
        if isinstance(d, (int, float)):
            return cls.constant(d)
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError(f"init entry must be a number or {{kind: ...}}, got {d!r}")
        keys = {"constant": ("value",), "uniform": ("low", "high"), "truncexp": ("rate", "upper")}
        kind = d["kind"]
        if kind not in keys:
            raise ConfigError(f"unknown init kind {kind!r}")
        try:
            return cls(kind, tuple(float(d[k]) for k in keys[kind]))
        except KeyError as exc:
            raise ConfigError(f"init kind {kind!r} missing field {exc.args[0]!r}") from None


# ---------------------------------------------------------------- spec

@dataclass(frozen=True)
class KernelModel:
    """Restricted model form handled by the compiled core.

    Constant interaction weights, ``f`` in {abs, relu}, fragmentation either a
    constant reset or a shift, and affine drift per node.
    """

    K: int
    h: np.ndarray  # (K, K), h[j, i] = weight j -> i, zero diagonal
    f_kind: int  # 0 abs, 1 relu
    g_kind: np.ndarray  # (K,) 0 = reset to g_val, 1 = lam + g_val
    g_val: np.ndarray
    drift_a: np.ndarray
    drift_c: np.ndarray


F_KINDS = {"abs": 0, "relu": 1}


@dataclass(frozen=True, eq=False)
class CFIAPSpec:
    """Full cFIAP definition.

    ``h[j][i]`` is the weight of an interaction from node ``j`` to node ``i``;
    diagonal entries are ignored.
    """

    K: int
    h: tuple[tuple[Expr, ...], ...]
    H: float
    f: Expr
    L_f: float
    g: tuple[Expr, ...]
    sigma: tuple[Expr, ...]
    init: tuple[InitLaw, ...]
    horizon: float
    rate_bound: Optional[tuple[Expr, ...]] = None
    example: Optional[str] = None
    params: Optional[dict] = None
    variant: Optional[str] = None

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if len(self.h) != self.K or any(len(row) != self.K for row in self.h):
            raise ConfigError("h must be a K x K matrix")
        for name in ("g", "sigma", "init"):
            if len(getattr(self, name)) != self.K:
                raise ConfigError(f"{name} must have K entries")
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0")
        if self.rate_bound is not None and len(self.rate_bound) != self.K:
            raise ConfigError("rate_bound must have K entries")

    def __eq__(self, other):
        return isinstance(other, CFIAPSpec) and self.to_config() == other.to_config()

    __hash__ = None

    # evaluation helpers
    def h_value(self, j: int, i: int, t: float) -> float:
        return 0.0 if i == j else self.h[j][i](t)

    def h_const(self) -> Optional[np.ndarray]:
        out = np.zeros((self.K, self.K))
        for j in range(self.K):
            for i in range(self.K):
                if i == j:
                    continue
                c = self.h[j][i].constant
                if c is None:
                    return None
                out[j, i] = c
        return out

    def drift(self, i: int) -> Drift:
        ac = self.sigma[i].affine_in("lam")
        if ac is not None:
            return AffineDrift(ac[0], ac[1] - 1.0)
        s = self.sigma[i]
        return RK4Drift(lambda t, lam: s(t, lam) - lam)

    def init_mean(self) -> np.ndarray:
        return np.array([law.mean() for law in self.init])

    def with_horizon(self, horizon: float) -> "CFIAPSpec":
        return _replace(self, horizon=float(horizon))

    def kernel_model(self) -> Optional[KernelModel]:
        """The compiled-core form of this spec, or None if it does not fit.

        Specs with a user-declared ``rate_bound`` stay on the expression engine
        so that the declared bound is the one used for thinning.
        """
        if self.rate_bound is not None:
            return None
        h = self.h_const()
        fk = self.f.kind
        if h is None or fk not in F_KINDS:
            return None
        gk, gv, da, dc = [], [], [], []
        for i in range(self.K):
            g = self.g[i].affine_in("lam")
            s = self.sigma[i].affine_in("lam")
            if g is None or s is None or g[1] not in (0.0, 1.0):
                return None
            gk.append(int(g[1]))
            gv.append(g[0])
            da.append(s[0])
            dc.append(s[1] - 1.0)
        return KernelModel(self.K, h, F_KINDS[fk], np.array(gk, dtype=np.int64),
                           np.array(gv), np.array(da), np.array(dc))

    # config round trip
    def to_config(self) -> dict:
        init = [law.to_config() for law in self.init]
        d: dict[str, Any] = {"K": self.K, "horizon": self.horizon}
        if self.example is not None:
            d["example"] = self.example
            d["params"] = dict(self.params or {})
        else:
            d["custom"] = {
                "h_matrix": [[e.source for e in row] for row in self.h],
                "H": self.H,
                "f": self.f.source,
                "L_f": self.L_f,
                "g": [e.source for e in self.g],
                "sigma": [e.source for e in self.sigma],
            }
            if self.rate_bound is not None:
                d["custom"]["rate_bound"] = [e.source for e in self.rate_bound]
        d["init"] = init
        if self.variant is not None:
            d["variant"] = self.variant
        return d


def _replace(spec: CFIAPSpec, **kw) -> CFIAPSpec:
    from dataclasses import replace
    return replace(spec, **kw)


def _per_node(x, K: int, name: str) -> list[float]:
    if isinstance(x, (int, float)):
        return [float(x)] * K
    x = [float(v) for v in x]
    if len(x) != K:
        raise ConfigError(f"{name} must be a scalar or have K={K} entries")
    return x


def _matrix(x, K: int, name: str) -> list[list[float]]:
    if isinstance(x, (int, float)):
        return [[0.0 if i == j else float(x) for i in range(K)] for j in range(K)]
    rows = [[float(v) for v in row] for row in x]
    if len(rows) != K or any(len(r) != K for r in rows):
        raise ConfigError(f"{name} must be a scalar or a {K}x{K} matrix")
    return rows


def _num(v: float) -> str:
    return repr(float(v))


def _init_laws(init, K: int) -> tuple[InitLaw, ...]:
    if isinstance(init, list):
        if len(init) != K:
            raise ConfigError(f"init list must have K={K} entries")
        return tuple(InitLaw.from_config(e) for e in init)
    return (InitLaw.from_config(init),) * K


def builtin(name: str, K: int = 2, horizon: float = 2.0, init: Any = None, **params) -> CFIAPSpec:
    """Build one of the three example networks.

    GL examples take ``mu`` (scalar or KxK, row = source), ``r``, ``b`` and an
    optional relaxation time ``tau``; ``gordon_newell`` takes no parameters.
    """
    if name not in BUILTINS:
        raise ConfigError(f"unknown builtin {name!r}; expected one of {BUILTINS}")
    K = int(K)
    if K < 1:
        raise ConfigError(f"field 'K': need K >= 1, got {K}")
    if name == "gordon_newell":
        if K < 2:
            raise ConfigError("gordon_newell needs K >= 2")
        if params:
            raise ConfigError(f"gordon_newell takes no params, got {sorted(params)}")
        h = tuple(tuple(Expr("1.0" if j == (i + 1) % K and i != j else "0.0", H_VARS)
                        for i in range(K)) for j in range(K))
        laws = _init_laws(1.0 if init is None else init, K)
        return CFIAPSpec(
            K=K, h=h, H=1.0, f=Expr("abs(x)", F_VARS), L_f=1.0,
            g=tuple(Expr("lam - 1.0", NODE_VARS) for _ in range(K)),
            sigma=tuple(Expr("lam", NODE_VARS) for _ in range(K)),
            init=laws, horizon=float(horizon), example=name, params={},
        )

    unknown = set(params) - {"mu", "r", "b", "tau"}
    if unknown:
        raise ConfigError(f"unknown GL params {sorted(unknown)}")
    mu = _matrix(params.get("mu", 1.0), K, "mu")
    r = _per_node(params.get("r", 1.0), K, "r")
    b = _per_node(params.get("b", 1.0), K, "b")
    tau = params.get("tau")
    if any(v < 0 for v in r) or any(v < 0 for v in b):
        raise ConfigError("r and b must be nonnegative")
    if name == "gl_excitatory" and any(mu[j][i] < 0 for j in range(K) for i in range(K) if i != j):
        raise ConfigError("gl_excitatory needs mu >= 0; use gl_inhibitory for signed weights")
    if tau is None:
        sig = [Expr(_num(bi), NODE_VARS) for bi in b]
    else:
        taus = _per_node(tau, K, "tau")
        if any(t <= 0 for t in taus):
            raise ConfigError("tau must be > 0")
        sig = [Expr(f"lam + ({_num(bi)} - lam) * {_num(1.0 / ti)}", NODE_VARS)
               for bi, ti in zip(b, taus)]
    h = tuple(tuple(Expr(_num(0.0 if i == j else mu[j][i]), H_VARS) for i in range(K))
              for j in range(K))
    H = max([abs(mu[j][i]) for j in range(K) for i in range(K) if i != j], default=0.0)
    f = Expr("abs(x)" if name == "gl_excitatory" else "max(0, x)", F_VARS)
    laws = _init_laws(r[0] if init is None else init, K)
    stored = {k: v for k, v in params.items()}
    return CFIAPSpec(
        K=K, h=h, H=H, f=f, L_f=1.0,
        g=tuple(Expr(_num(ri), NODE_VARS) for ri in r),
        sigma=tuple(sig), init=laws, horizon=float(horizon), example=name, params=stored,
    )


def dominated(spec: CFIAPSpec) -> CFIAPSpec:
    """Same network with resets and drift switched off (g = σ = identity)."""
    ident = tuple(Expr("lam", NODE_VARS) for _ in range(spec.K))
    return _replace(spec, g=ident, sigma=ident, rate_bound=None, variant="dominated")


def driftless(spec: CFIAPSpec) -> CFIAPSpec:
    """Same network with the drift removed (σ = identity), keeping resets.

    With integer kernels, resets and initial values this keeps the intensity on
    the integer lattice.
    """
    ident = tuple(Expr("lam", NODE_VARS) for _ in range(spec.K))
    return _replace(spec, sigma=ident, rate_bound=None, variant="driftless")


VARIANTS = {"dominated": dominated, "driftless": driftless}


def from_config(cfg: dict) -> CFIAPSpec:
    if not isinstance(cfg, dict):
        raise ConfigError("model config must be an object")
    for key in ("K", "horizon"):
        if key not in cfg:
            raise ConfigError(f"model config missing field {key!r}")
    K, horizon = int(cfg["K"]), float(cfg["horizon"])
    init = cfg.get("init")
    try:
        if "example" in cfg:
            spec = builtin(cfg["example"], K=K, horizon=horizon, init=init, **cfg.get("params", {}))
        elif "custom" in cfg:
            c = cfg["custom"]
            for key in ("h_matrix", "f", "g", "sigma"):
                if key not in c:
                    raise ConfigError(f"custom model missing field {key!r}")
            hm = c["h_matrix"]
            if len(hm) != K or any(len(row) != K for row in hm):
                raise ConfigError(f"custom.h_matrix must be {K}x{K}")
            h = tuple(tuple(Expr(hm[j][i] if i != j else "0.0", H_VARS) for i in range(K))
                      for j in range(K))

            def node_exprs(v, name):
                v = v if isinstance(v, list) else [v] * K
                if len(v) != K:
                    raise ConfigError(f"custom.{name} must have K={K} entries")
                return tuple(Expr(e, NODE_VARS) for e in v)

            H = c.get("H")
            if H is None:
                raise ConfigError("custom model needs a declared bound 'H'")
            spec = CFIAPSpec(
                K=K, h=h, H=float(H), f=Expr(c["f"], F_VARS), L_f=float(c.get("L_f", 1.0)),
                g=node_exprs(c["g"], "g"), sigma=node_exprs(c["sigma"], "sigma"),
                init=_init_laws(0.0 if init is None else init, K), horizon=horizon,
                rate_bound=node_exprs(c["rate_bound"], "rate_bound") if "rate_bound" in c else None,
            )
        else:
            raise ConfigError("model config needs either 'example' or 'custom'")
    except ExprError as exc:
        raise ConfigError(f"bad expression: {exc}") from None
    variant = cfg.get("variant")
    if variant is not None:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        spec = VARIANTS[variant](spec)
    return spec


def load_config(path: str | Path) -> dict:
    """Read a JSON config; parse errors name the line and column."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def dump_config(spec: CFIAPSpec) -> str:
    return json.dumps(spec.to_config(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Finding:
    check: str
    status: str  # pass | warn | fail
    detail: str = ""


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    def add(self, check, status, detail=""):
        self.findings.append(Finding(check, status, detail))

    def status(self, check: str) -> str:
        for f in self.findings:
            if f.check == check:
                return f.status
        raise KeyError(check)

    @property
    def ok(self) -> bool:
        return all(f.status != "fail" for f in self.findings)

    def lines(self) -> list[str]:
        return [f"{f.status.upper():4s}  {f.check}: {f.detail}" for f in self.findings]


def _integer_lattice(spec: CFIAPSpec, km: Optional[KernelModel]) -> bool:
    if km is None:
        return False
    ints = lambda a: np.all(np.asarray(a) == np.round(a))
    return bool(
        ints(km.h) and ints(km.g_val) and np.all(km.drift_a == 0) and np.all(km.drift_c == 0)
        and all(l.is_constant and float(l.params[0]).is_integer() for l in spec.init)
    )


def validate(spec: CFIAPSpec, seed: int = 0, n_grid: int = 1000, n_pairs: int = 1000,
             lam_max: float = 50.0) -> ValidationReport:
    """Spot-check the standing assumptions on ``spec``. Never raises."""
    rep = ValidationReport()
    K = spec.K
    rng = RngStream(seed, (0, 0, 0, int(Purpose.CHECK))).numpy()
    ts = np.linspace(0.0, spec.horizon, n_grid)
    lams = np.linspace(0.0, lam_max, 101)

    worst = 0.0
    for j in range(K):
        for i in range(K):
            if i != j:
                worst = max(worst, max(abs(spec.h[j][i](t)) for t in ts))
    rep.add("h_bounded", "pass" if worst <= spec.H * (1 + 1e-12) else "fail",
            f"max |h| on grid = {worst:g}, declared H = {spec.H:g}")
    rep.add("h_diagonal", "pass", "self-interaction entries are ignored")

    f0 = spec.f(0.0)
    rep.add("f_zero", "pass" if f0 == 0.0 else "fail", f"f(0) = {f0:g}")
    scale = max(1.0, 10 * spec.H * max(K - 1, 1))
    xs = rng.uniform(-scale, scale, size=(n_pairs, 2))
    fx = np.array([[spec.f(a), spec.f(b)] for a, b in xs])
    rep.add("f_nonnegative", "pass" if np.all(fx >= 0) else "fail",
            f"min f on {n_pairs} random points = {fx.min():g}")
    ratio = np.abs(fx[:, 0] - fx[:, 1]) / np.maximum(np.abs(xs[:, 0] - xs[:, 1]), 1e-300)
    rep.add("f_lipschitz", "pass" if ratio.max() <= spec.L_f * (1 + 1e-9) else "fail",
            f"max slope on random pairs = {ratio.max():g}, declared L_f = {spec.L_f:g}")

    km = spec.kernel_model()
    lattice = _integer_lattice(spec, km)
    tsub = ts[:: max(1, n_grid // 20)]
    a1_viol = []
    for i in range(K):
        grid = np.arange(1.0, lam_max + 1) if lattice else lams
        gv = np.array([[spec.g[i](t, l) for l in grid] for t in tsub])
        sv = np.array([[spec.sigma[i](t, l) for l in lams] for t in tsub])
        if gv.min() < 0:
            rep.add(f"g_nonnegative[{i}]", "fail", f"min g = {gv.min():g}")
        else:
            note = " (integer lattice: g applied only at event times where lam >= 1)" if lattice else ""
            rep.add(f"g_nonnegative[{i}]", "pass", f"min g = {gv.min():g}{note}")
        rep.add(f"sigma_nonnegative[{i}]", "pass" if sv.min() >= 0 else "fail",
                f"min sigma = {sv.min():g}")
        gl = np.array([[spec.g[i](t, l) - l for l in lams] for t in tsub])
        sl = np.array([[spec.sigma[i](t, l) - l for l in lams] for t in tsub])
        if gl.max() > 1e-12 or sl.max() > 1e-12:
            a1_viol.append(i)
    if a1_viol:
        rep.add("assumption_monotone", "warn",
                f"g <= lam and sigma <= lam fail for nodes {a1_viol}; "
                "rate-exponent claims are not certified for this spec")
    else:
        rep.add("assumption_monotone", "pass", "g <= lam and sigma <= lam on grid")

    xi0 = 1.0
    moments = [law.exp_moment(xi0) for law in spec.init]
    rep.add("init_exp_moment", "pass" if all(math.isfinite(m) for m in moments) else "fail",
            f"E[exp({xi0:g} Z_i)] = {[round(m, 6) for m in moments]}")

    neg_h = any(spec.h[j][i](t) < 0 for j in range(K) for i in range(K) if i != j for t in tsub)
    if neg_h:
        rep.add("rate_clamp", "warn",
                "signed interactions: intensity may go negative, event rate is max(lam, 0)")

    if any(not isinstance(spec.drift(i), AffineDrift) for i in range(K)) and spec.rate_bound is None:
        if a1_viol:
            rep.add("rate_bound", "fail",
                    "non-affine drift without Assumption-1 compliance needs custom.rate_bound")
        else:
            rep.add("rate_bound", "pass", "nonincreasing between events; current intensity bounds")
    return rep
