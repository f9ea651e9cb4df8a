"""Discrete-time FIAPs, their replica versions, and the δ-step chain of an
integer-state GL network.

States are integer arrays; replica ``m`` in ``0..M-1``, node ``i`` in ``0..K-1``.
Weights are indexed ``mu[j][i]`` for the transfer ``j → i``.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats as sps

from .expr import Expr
from .model import CFIAPSpec
from .stats import Pmf

ENUM_BUDGET = 22        # max (M-1)(K-1) spike coordinates enumerated exactly
JOINT_BUDGET = 2_000_000  # max joint outcomes enumerated for P_δ
_CHUNK = 1 << 16

IntFn = Callable[[int], float]
FnLike = Union[str, Expr, Callable[[int], float]]


class BudgetExceeded(ValueError):
    """Raised when an exact enumeration would exceed its budget."""


def _fn(v: FnLike) -> IntFn:
    if isinstance(v, str):
        v = Expr(v, ("x",))
    if isinstance(v, Expr):
        e = v
        return lambda x: e(x)
    if callable(v):
        return v
    c = float(v)
    return lambda x: c


def _const(c: float) -> IntFn:
    return lambda x: c


def _ident(x: int) -> int:
    return x


# ---------------------------------------------------------------- generic FIAP


@dataclass(frozen=True)
class DFiapSpec:
    """Discrete-time FIAP: on activation (prob σ_i(x)) node i moves to g1_i(x) and
    sends h_{j→i}(x) to every other node; otherwise it moves to g2_i(x)."""

    K: int
    g1: tuple
    g2: tuple
    h: tuple  # h[j][i]
    sigma: tuple

    @classmethod
    def build(cls, K: int, g1, g2, h, sigma) -> "DFiapSpec":
        per = lambda v: tuple(_fn(x) for x in v) if isinstance(v, (list, tuple)) else (_fn(v),) * K
        hh = h if isinstance(h, (list, tuple)) else [[h] * K for _ in range(K)]
        return cls(K, per(g1), per(g2), tuple(tuple(_fn(x) for x in row) for row in hh), per(sigma))

    def check(self, max_state: int = 50) -> None:
        """Spot-check the class invariants on ``0..max_state``."""
        xs = range(max_state + 1)
        for i in range(self.K):
            s = [self.sigma[i](x) for x in xs]
            if s[0] != 0:
                raise ValueError(f"sigma_{i}(0) = {s[0]} must be 0")
            if s[1] <= 0:
                raise ValueError(f"sigma_{i}(1) must be > 0")
            if any(not 0 <= v <= 1 for v in s):
                raise ValueError(f"sigma_{i} leaves [0, 1]")
            if any(b < a for a, b in zip(s, s[1:])):
                raise ValueError(f"sigma_{i} is not nondecreasing")
            for name, g in (("g1", self.g1[i]), ("g2", self.g2[i])):
                vals = [g(x) for x in xs]
                if any(v < 0 or v != int(v) for v in vals):
                    raise ValueError(f"{name}_{i} must map naturals to naturals")
            for j in range(self.K):
                if j != i:
                    vals = [self.h[j][i](x) for x in xs]
                    if any(v < 0 or v != int(v) for v in vals):
                        raise ValueError(f"h_{j}->{i} must map naturals to naturals")


def _activate(state, spec: DFiapSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    sig = np.array([[spec.sigma[i](int(x)) for i, x in enumerate(row)] for row in state])
    return rng.random(state.shape) < sig, sig


def step_dfiap(state: Sequence[int], spec: DFiapSpec, rng: np.random.Generator) -> np.ndarray:
    """One synchronous step of a K-node FIAP."""
    x = np.asarray(state, dtype=np.int64).reshape(1, -1)
    act, _ = _activate(x, spec, rng)
    act, x = act[0], x[0]
    K = spec.K
    y = np.array([spec.g1[i](int(x[i])) if act[i] else spec.g2[i](int(x[i])) for i in range(K)],
                 dtype=np.int64)
    for i in range(K):
        y[i] += sum(int(spec.h[j][i](int(x[j]))) for j in range(K) if j != i and act[j])
    return y


def step_rmf_dfiap(state: np.ndarray, spec: DFiapSpec, M: int, rng: np.random.Generator,
                   return_arrivals: bool = False):
    """One synchronous step of the M-replica FIAP.

    Each activated ``(m, j)`` sends ``h_{j→i}`` to node ``i`` of a uniform replica
    other than ``m``, independently for each target node ``i``.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    x = np.asarray(state, dtype=np.int64)
    if x.shape != (M, spec.K):
        raise ValueError(f"state must be ({M}, {spec.K})")
    K = spec.K
    act, _ = _activate(x, spec, rng)
    y = np.empty_like(x)
    for m in range(M):
        for i in range(K):
            xi = int(x[m, i])
            y[m, i] = spec.g1[i](xi) if act[m, i] else spec.g2[i](xi)
    arr = np.zeros_like(x)
    for m in range(M):
        for j in range(K):
            if not act[m, j]:
                continue
            for i in range(K):
                if i == j:
                    continue
                n = (m + 1 + int(rng.integers(0, M - 1))) % M
                arr[n, i] += int(spec.h[j][i](int(x[m, j])))
    y += arr
    return (y, arr) if return_arrivals else y


def _bernoulli_sum_pmf(terms: Sequence[tuple[int, float]]) -> np.ndarray:
    """Dense pmf of Σ w_k·Bernoulli(q_k) for integer weights w_k ≥ 0."""
    dense = np.array([1.0])
    for w, q in terms:
        if q == 0.0 or w == 0:
            continue
        nxt = np.zeros(dense.size + w)
        nxt[: dense.size] += (1.0 - q) * dense
        nxt[w:] += q * dense
        dense = nxt
    return dense


def fiap_kernel_exact(state: np.ndarray, spec: DFiapSpec, M: int, m: int, i: int) -> Pmf:
    """Law of the next value of coordinate ``(m, i)`` in the M-replica FIAP.

    The arrival count is a sum of independent terms, one per ``(n, j)`` with
    ``n ≠ m``, ``j ≠ i``: weight ``h_{j→i}(x_{n,j})`` with probability
    ``σ_j(x_{n,j})/(M-1)``.
    """
    x = np.asarray(state, dtype=np.int64)
    terms = []
    for n in range(M):
        if n == m:
            continue
        for j in range(spec.K):
            if j == i:
                continue
            xj = int(x[n, j])
            terms.append((int(spec.h[j][i](xj)), spec.sigma[j](xj) / (M - 1)))
    arr = _bernoulli_sum_pmf(terms)
    k = int(x[m, i])
    s = spec.sigma[i](k)
    return _mix_shift(arr, [(s, int(spec.g1[i](k))), (1.0 - s, int(spec.g2[i](k)))])


def _mix_shift(arr: np.ndarray, parts: Sequence[tuple[float, int]]) -> Pmf:
    out: dict[int, float] = {}
    for w, shift in parts:
        if w == 0.0:
            continue
        for a, pa in enumerate(arr):
            if pa != 0.0:
                out[shift + a] = out.get(shift + a, 0.0) + w * pa
    return Pmf.from_dict(out)


# ---------------------------------------------------------------- δ-chain


@dataclass(frozen=True)
class DeltaChainSpec:
    """δ-step chain of an integer-state GL network.

    Each step, node ``(m, i)`` spikes with probability ``1 - exp(-σ_i(λ)δ)``
    and resets to ``r_i``; each spike of node ``i`` then adds ``mu[i][j]`` to
    node ``j`` of a uniform other replica, independently for each ``j``.
    """

    K: int
    r: tuple
    mu: tuple
    sigma: tuple
    delta: float
    sigma_src: tuple = ()

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if len(self.r) != self.K or any(int(v) != v or v < 1 for v in self.r):
            raise ValueError("resets r_i must be positive integers")
        for j in range(self.K):
            for i in range(self.K):
                v = self.mu[j][i]
                if i != j and (int(v) != v or v < 0):
                    raise ValueError("weights mu must be nonnegative integers")

    @classmethod
    def build(cls, K: int, r, mu, sigma: FnLike, delta: float) -> "DeltaChainSpec":
        r = tuple(int(v) for v in (r if isinstance(r, (list, tuple)) else [r] * K))
        mu = mu if isinstance(mu, (list, tuple)) else [[0 if i == j else mu for i in range(K)]
                                                        for j in range(K)]
        mu = tuple(tuple(0 if i == j else int(mu[j][i]) for i in range(K)) for j in range(K))
        sig = sigma if isinstance(sigma, (list, tuple)) else [sigma] * K
        src = tuple(str(s.source if isinstance(s, Expr) else s) if isinstance(s, (str, Expr)) else ""
                    for s in sig)
        return cls(K, r, mu, tuple(_fn(s) for s in sig), float(delta), src)

    def with_delta(self, delta: float) -> "DeltaChainSpec":
        return DeltaChainSpec(self.K, self.r, self.mu, self.sigma, float(delta), self.sigma_src)

    def spike_prob(self, i: int, x: int) -> float:
        """p(x) = 1 - exp(-σ_i(x) δ)."""
        return -math.expm1(-self.sigma[i](int(x)) * self.delta)

    def to_config(self) -> dict:
        if not all(self.sigma_src):
            raise ValueError("spike-rate maps given as Python callables cannot be serialized")
        return {"K": self.K, "r": list(self.r), "mu": [list(row) for row in self.mu],
                "sigma": list(self.sigma_src), "delta": self.delta}

    @classmethod
    def from_config(cls, cfg: dict) -> "DeltaChainSpec":
        for key in ("K", "r", "mu", "sigma", "delta"):
            if key not in cfg:
                raise ValueError(f"delta-chain config missing field {key!r}")
        return cls.build(int(cfg["K"]), cfg["r"], cfg["mu"], cfg["sigma"], cfg["delta"])


def delta_chain_from_gl(spec: CFIAPSpec, delta: float) -> DeltaChainSpec:
    """δ-chain of a drift-free GL network with integer kernels and resets.

    The spike rate of a GL node is its intensity, so σ(x) = x.
    """
    km = spec.kernel_model()
    if km is None or km.f_kind != 0:
        raise ValueError("δ-chain needs a GL network with constant kernels and f = |x|")
    if np.any(km.drift_a != 0) or np.any(km.drift_c != 0):
        raise ValueError("δ-chain needs drift-free dynamics (use model.driftless)")
    if np.any(km.g_kind != 0):
        raise ValueError("δ-chain needs constant resets")
    if np.any(km.h < 0) or np.any(km.h != np.round(km.h)):
        raise ValueError("δ-chain needs nonnegative integer weights")
    return DeltaChainSpec.build(spec.K, [int(v) for v in km.g_val], km.h.astype(int).tolist(),
                                "x", delta)


def fiap_from_delta_chain(spec: DeltaChainSpec) -> DFiapSpec:
    """The FIAP with σ_δ(x) = 1 - exp(-σ(x)δ), g1 = reset, g2 = identity, h = μ."""
    K = spec.K
    sig = tuple((lambda i: lambda x: spec.spike_prob(i, x))(i) for i in range(K))
    return DFiapSpec(
        K=K,
        g1=tuple(_const(float(spec.r[i])) for i in range(K)),
        g2=(_ident,) * K,
        h=tuple(tuple(_const(float(spec.mu[j][i])) for i in range(K)) for j in range(K)),
        sigma=sig,
    )


def _check_state(state, M: int, K: int) -> np.ndarray:
    if M < 2:
        raise ValueError("M must be >= 2")
    x = np.asarray(state, dtype=np.int64)
    if x.shape != (M, K):
        raise ValueError(f"state must have shape ({M}, {K}), got {x.shape}")
    if np.any(x < 0):
        raise ValueError("states must be nonnegative")
    return x


def delta_step_batch(state: np.ndarray, spec: DeltaChainSpec, M: int, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``n`` independent one-step successors of ``state``, shape ``(n, M, K)``."""
    x = _check_state(state, M, spec.K)
    K = spec.K
    p = np.array([[spec.spike_prob(i, x[m, i]) for i in range(K)] for m in range(M)])
    spikes = rng.random((n, M, K)) < p
    r = np.asarray(spec.r, dtype=np.int64)
    y = np.where(spikes, r, x).astype(np.int64)
    rows = np.arange(n)
    for m in range(M):
        for i in range(K):
            s = spikes[:, m, i]
            for j in range(K):
                if j == i or spec.mu[i][j] == 0:
                    continue
                tgt = (m + 1 + rng.integers(0, M - 1, size=n)) % M
                np.add.at(y, (rows, tgt, j), spec.mu[i][j] * s)
    return y


def delta_step(state: np.ndarray, spec: DeltaChainSpec, M: int,
               rng: np.random.Generator) -> np.ndarray:
    """One step of the δ-chain: resets first, then routed increments."""
    return delta_step_batch(state, spec, M, 1, rng)[0]


def run_chain(state: np.ndarray, spec: DeltaChainSpec, M: int, n_steps: int,
              rng: np.random.Generator) -> np.ndarray:
    """Trajectory of ``n_steps`` steps, shape ``(n_steps + 1, M, K)``."""
    x = _check_state(state, M, spec.K)
    out = np.empty((n_steps + 1, M, spec.K), dtype=np.int64)
    out[0] = x
    for s in range(n_steps):
        out[s + 1] = delta_step(out[s], spec, M, rng)
    return out


def trajectory_csv(traj: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "replica", "node", "state"])
    for s in range(traj.shape[0]):
        for m in range(traj.shape[1]):
            for i in range(traj.shape[2]):
                w.writerow([s, m, i, int(traj[s, m, i])])
    return buf.getvalue()


def _subset_arrival_pmf(p: np.ndarray, w: np.ndarray, q: float) -> np.ndarray:
    """Enumerate every spike subset J; given J, arrivals of weight w land
    independently with probability q, so equal weights combine binomially."""
    n = p.size
    groups, gidx = np.unique(w, return_inverse=True)
    onehot = np.zeros((n, groups.size), dtype=np.int64)
    onehot[np.arange(n), gidx] = 1
    by_counts: dict[tuple, float] = {}
    shifts = np.arange(n, dtype=np.int64)
    for lo in range(0, 1 << n, _CHUNK):
        sub = np.arange(lo, min(lo + _CHUNK, 1 << n), dtype=np.int64)
        bits = ((sub[:, None] >> shifts) & 1).astype(bool)
        prob = np.where(bits, p, 1.0 - p).prod(axis=1)
        counts = bits.astype(np.int64) @ onehot
        uniq, inv = np.unique(counts, axis=0, return_inverse=True)
        mass = np.bincount(inv.ravel(), weights=prob, minlength=uniq.shape[0])
        for c, pm in zip(map(tuple, uniq), mass):
            by_counts[c] = by_counts.get(c, 0.0) + pm
    size = int(np.dot(groups, onehot.sum(axis=0))) + 1
    out = np.zeros(size)
    for c, pm in by_counts.items():
        if pm == 0.0:
            continue
        dense = np.array([1.0])
        for wv, cnt in zip(groups, c):
            if cnt == 0 or wv == 0:
                continue
            b = sps.binom.pmf(np.arange(cnt + 1), cnt, q)
            spread = np.zeros(int(wv) * cnt + 1)
            spread[:: int(wv)] = b
            dense = np.convolve(dense, spread)
        out[: dense.size] += pm * dense
    return out


def arrival_pmf_exact(state: np.ndarray, spec: DeltaChainSpec, M: int, m: int, i: int) -> Pmf:
    """Exact law of the routed increments reaching ``(m, i)`` in one δ-step."""
    x = _check_state(state, M, spec.K)
    K = spec.K
    n_coords = (M - 1) * (K - 1)
    if n_coords > ENUM_BUDGET:
        raise BudgetExceeded(
            f"exact enumeration needs (M-1)(K-1) <= {ENUM_BUDGET}, got {n_coords}; use Monte Carlo")
    if n_coords == 0:
        return Pmf.from_dict({0: 1.0})
    p, w = [], []
    for n in range(M):
        if n == m:
            continue
        for j in range(K):
            if j == i:
                continue
            p.append(spec.spike_prob(j, x[n, j]))
            w.append(spec.mu[j][i])
    dense = _subset_arrival_pmf(np.array(p), np.array(w, dtype=np.int64), 1.0 / (M - 1))
    return Pmf.from_dense(dense)


def transition_pmf_exact(state: np.ndarray, spec: DeltaChainSpec, M: int, m: int, i: int) -> Pmf:
    """Law of the next value of ``(m, i)``: reset-then-arrive or stay-then-arrive."""
    x = _check_state(state, M, spec.K)
    arr = arrival_pmf_exact(x, spec, M, m, i)
    dense = np.zeros(int(arr.support.max()) + 1)
    dense[arr.support] = arr.probs
    p = spec.spike_prob(i, x[m, i])
    return _mix_shift(dense, [(p, spec.r[i]), (1.0 - p, int(x[m, i]))])


def transition_prob_exact(state: np.ndarray, spec: DeltaChainSpec, M: int, m: int, i: int,
                          l: int) -> float:
    """P(λ_{m,i} goes from k = state[m, i] to l) = p·P(A = l - r_i) + (1-p)·P(A = l - k)."""
    x = _check_state(state, M, spec.K)
    arr = arrival_pmf_exact(x, spec, M, m, i)
    p = spec.spike_prob(i, x[m, i])
    k = int(x[m, i])
    return p * arr[l - spec.r[i]] + (1.0 - p) * arr[l - k]


def transition_table_csv(state: np.ndarray, spec: DeltaChainSpec, M: int) -> str:
    """Single-coordinate transition table for every ``(m, i)`` from ``state``."""
    x = _check_state(state, M, spec.K)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "i", "k", "l", "probability"])
    for m in range(M):
        for i in range(spec.K):
            pmf = transition_pmf_exact(x, spec, M, m, i)
            for l, pr in zip(pmf.support, pmf.probs):
                w.writerow([m, i, int(x[m, i]), int(l), repr(float(pr))])
    return buf.getvalue()


def kernel_agreement(spec: DeltaChainSpec, M: int, max_state: int = 20,
                     coords: Optional[Sequence[tuple[int, int]]] = None) -> dict:
    """Compare the δ-chain kernel with the FIAP kernel built from σ_δ.

    For each target coordinate ``(m, i)`` the kernel depends only on
    ``x[m, i]`` and ``x[n, j]`` with ``n ≠ m``, ``j ≠ i``; all of these range
    over ``0..max_state`` while the rest are held at 0.
    """
    fs = fiap_from_delta_chain(spec)
    K = spec.K
    coords = [(m, i) for m in range(M) for i in range(K)] if coords is None else coords
    worst, n_states = 0.0, 0
    for m, i in coords:
        rel = [(m, i)] + [(n, j) for n in range(M) if n != m for j in range(K) if j != i]
        for vals in itertools.product(range(max_state + 1), repeat=len(rel)):
            x = np.zeros((M, K), dtype=np.int64)
            for (a, b), v in zip(rel, vals):
                x[a, b] = v
            p1 = transition_pmf_exact(x, spec, M, m, i).as_dict()
            p2 = fiap_kernel_exact(x, fs, M, m, i).as_dict()
            for l in set(p1) | set(p2):
                worst = max(worst, abs(p1.get(l, 0.0) - p2.get(l, 0.0)))
            n_states += 1
    return {"max_abs_diff": worst, "n_states": n_states, "max_state": max_state}


# ---------------------------------------------------------------- generator


def joint_transition_exact(state: np.ndarray, spec: DeltaChainSpec, M: int) -> dict:
    """Full one-step law ``{next_state_bytes: prob}`` by enumerating spike
    patterns and routing vectors."""
    x = _check_state(state, M, spec.K)
    K = spec.K
    MK = M * K
    n_routes = (M - 1) ** (K - 1)
    if (2 * n_routes) ** MK > JOINT_BUDGET:
        raise BudgetExceeded(f"joint enumeration over {(2 * n_routes) ** MK} outcomes exceeds "
                             f"{JOINT_BUDGET}")
    p = np.array([[spec.spike_prob(i, x[m, i]) for i in range(K)] for m in range(M)]).ravel()
    offsets = list(itertools.product(range(M - 1), repeat=K - 1))
    out: dict[bytes, float] = {}
    for pattern in itertools.product((0, 1), repeat=MK):
        pr = 1.0
        for s, pk in zip(pattern, p):
            pr *= pk if s else 1.0 - pk
        if pr == 0.0:
            continue
        base = x.copy().ravel()
        spikers = [k for k, s in enumerate(pattern) if s]
        for k in spikers:
            base[k] = spec.r[k % K]
        base = base.reshape(M, K)
        q = pr / n_routes ** len(spikers)
        for routes in itertools.product(offsets, repeat=len(spikers)):
            y = base.copy()
            for k, v in zip(spikers, routes):
                m, i = divmod(k, K)
                others = [j for j in range(K) if j != i]
                for j, off in zip(others, v):
                    y[(m + 1 + off) % M, j] += spec.mu[i][j]
            key = y.tobytes()
            out[key] = out.get(key, 0.0) + q
    return out


def apply_kernel(test_fn: Callable[[np.ndarray], float], state: np.ndarray,
                 spec: DeltaChainSpec, M: int) -> float:
    """(P_δ f)(state) by exact enumeration."""
    K = spec.K
    return sum(pr * test_fn(np.frombuffer(k, dtype=np.int64).reshape(M, K))
               for k, pr in joint_transition_exact(state, spec, M).items())


def generator_exact(test_fn: Callable[[np.ndarray], float], state: np.ndarray,
                    spec: DeltaChainSpec, M: int) -> float:
    """Continuous-time generator: Σ_{m,i} σ(λ_{m,i}) · average over routing
    vectors v of [f(reset (m,i), add μ_{i→j} at (v_j, j)) - f(λ)]."""
    x = _check_state(state, M, spec.K)
    K = spec.K
    f0 = test_fn(x)
    total = 0.0
    for m in range(M):
        others_m = [n for n in range(M) if n != m]
        for i in range(K):
            rate = spec.sigma[i](int(x[m, i]))
            if rate == 0.0:
                continue
            js = [j for j in range(K) if j != i]
            acc, cnt = 0.0, 0
            for v in itertools.product(others_m, repeat=len(js)):
                y = x.copy()
                y[m, i] = spec.r[i]
                for j, n in zip(js, v):
                    y[n, j] += spec.mu[i][j]
                acc += test_fn(y) - f0
                cnt += 1
            total += rate * acc / cnt
    return total


@dataclass(frozen=True)
class GeneratorResidual:
    deltas: tuple
    residuals: tuple
    generator: float

    @property
    def ratios(self) -> tuple:
        return tuple(b / a if a > 0 else float("nan")
                     for a, b in zip(self.residuals, self.residuals[1:]))


def generator_residual(test_fn: Callable[[np.ndarray], float], state: np.ndarray,
                       spec_cont: CFIAPSpec, M: int, deltas: Sequence[float]) -> GeneratorResidual:
    """|(P_δ f - f)/δ - 𝒜f| at ``state`` for each δ in ``deltas``."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be positive and strictly decreasing")
    chain = delta_chain_from_gl(spec_cont, deltas[0])
    x = _check_state(state, M, chain.K)
    gen = generator_exact(test_fn, x, chain, M)
    f0 = test_fn(x)
    res = []
    for d in deltas:
        pf = apply_kernel(test_fn, x, chain.with_delta(d), M)
        res.append(abs((pf - f0) / d - gen))
    return GeneratorResidual(tuple(deltas), tuple(res), gen)
