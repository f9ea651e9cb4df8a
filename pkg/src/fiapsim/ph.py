"""Poisson-Hypothesis dynamics and the Monte-Carlo fixed point of the mean-rate map."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from . import _core
from ._core import pyengine
from .model import CFIAPSpec
from .point_process.rng import Purpose, RngStream
from .rmf import _engine
from .stats import Pmf

DEFAULT_CELLS = 200


@dataclass(frozen=True)
class RateFunction:
    """Left-constant nonnegative rates on a uniform grid of ``[0, horizon]``.

    ``values[j, c]`` is the rate of node ``j`` on cell ``[cΔ, (c+1)Δ)``.
    """

    horizon: float
    values: np.ndarray
    stderr: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] == 0:
            raise ValueError("values must be (K, n_cells) with n_cells >= 1")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("rates must be finite and nonnegative")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, K: int, value: float | Sequence[float], horizon: float,
                 n_cells: int = DEFAULT_CELLS) -> "RateFunction":
        vals = np.broadcast_to(np.asarray(value, dtype=float).reshape(-1, 1), (K, n_cells))
        return cls(float(horizon), np.array(vals))

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    @property
    def step(self) -> float:
        return self.horizon / self.n_cells

    @property
    def cell_starts(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.step

    def __call__(self, j: int, t: float) -> float:
        c = min(int(t / self.step), self.n_cells - 1)
        return float(self.values[j, c])

    def integral(self, j: int, t: float) -> float:
        """Exact ∫_0^t of the left-constant representation."""
        if t < 0:
            raise ValueError("t must be >= 0")
        t = min(t, self.horizon)
        full = min(int(t / self.step), self.n_cells)
        s = float(self.values[j, :full].sum() * self.step)
        if full < self.n_cells:
            s += float(self.values[j, full]) * (t - full * self.step)
        return s

    def sup_distance(self, other: "RateFunction") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "cell_start", "rate"])
        starts = self.cell_starts
        for j in range(self.K):
            for c in range(self.n_cells):
                w.writerow([j, repr(float(starts[c])), repr(float(self.values[j, c]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, horizon: float) -> "RateFunction":
        rows = [(int(r["node"]), float(r["cell_start"]), float(r["rate"]))
                for r in csv.DictReader(io.StringIO(text))]
        if not rows:
            raise ValueError("empty rate table")
        K = max(r[0] for r in rows) + 1
        n = len(rows) // K
        if n * K != len(rows):
            raise ValueError("rate table is not rectangular")
        vals = np.zeros((K, n))
        for j, s, r in rows:
            vals[j, int(round(s / (horizon / n)))] = r
        return cls(float(horizon), vals)


@dataclass
class FixedPointResult:
    rates: RateFunction
    deltas: list
    noise_floors: list
    converged: bool
    iterations: int

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "sup_delta", "noise_floor"])
        for k, (d, nf) in enumerate(zip(self.deltas, self.noise_floors), start=1):
            w.writerow([k, repr(float(d)), repr(float(nf))])
        return buf.getvalue()


def ph_initial(spec: CFIAPSpec, seed: int, path_start: int, n_paths: int) -> np.ndarray:
    """Initial intensities ``(n_paths, K)``; uses the same streams as replica 0 in RMF."""
    out = np.empty((n_paths, spec.K))
    for i, law in enumerate(spec.init):
        if law.is_constant:
            out[:, i] = law.params[0]
        else:
            for p in range(n_paths):
                out[p, i] = law.sample(RngStream(seed, (path_start + p, 0, i, Purpose.INIT)).uniform())
    return out


def ph_batch(spec: CFIAPSpec, rates: RateFunction, n_paths: int, seed: int,
             obs_times: Sequence[float] = (), n_cells: int = 0, path_start: int = 0,
             horizon: Optional[float] = None, engine: str = "auto",
             node_labels: Optional[Sequence[int]] = None) -> dict:
    """Simulate ``n_paths`` PH systems.

    Returns ``lam_obs``/``arr_obs``/``dep_obs`` of shape ``(n_paths, n_obs, K)``,
    per-cell ∫λ̃ in ``cells`` and final values. ``node_labels`` (Python
    engine only) makes node ``i`` consume the streams of ``node_labels[i]``.
    """
    horizon = spec.horizon if horizon is None else float(horizon)
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    if rates.K != spec.K:
        raise ValueError(f"rate function has {rates.K} nodes, spec has {spec.K}")
    if rates.horizon < horizon * (1 - 1e-12):
        raise ValueError(f"rate grid covers [0, {rates.horizon}] but horizon is {horizon}")
    obs = np.asarray(obs_times, dtype=float)
    if np.any(obs < 0) or np.any(obs > horizon) or np.any(np.diff(obs) < 0):
        raise ValueError("obs_times must be sorted and inside [0, horizon]")
    init = ph_initial(spec, seed, path_start, n_paths)
    kind, model = _engine(spec, engine)
    args = (model, np.ascontiguousarray(rates.values), rates.horizon, horizon,
            seed & ((1 << 64) - 1), path_start, n_paths, init, obs, n_cells)
    if kind == "cython":
        if node_labels is not None:
            raise ValueError("node relabelling runs on the Python engine; pass engine='python'")
        return _core.ckernels.ph_paths(*args)
    return pyengine.ph_paths(*args, node_labels=node_labels)


def simulate_ph(spec: CFIAPSpec, rates: RateFunction, n_paths: int, seed: int,
                horizon: Optional[float] = None, obs_times: Optional[Sequence[float]] = None,
                engine: str = "auto") -> dict:
    """Per-node intensity and arrival-count samples on ``obs_times`` (default: the horizon)."""
    horizon = spec.horizon if horizon is None else float(horizon)
    obs = [horizon] if obs_times is None else list(obs_times)
    out = ph_batch(spec, rates, n_paths, seed, obs, 0, 0, horizon, engine)
    return {"times": np.asarray(obs), "lam": out["lam_obs"], "arrivals": out["arr_obs"],
            "departures": out["dep_obs"]}


def _cell_stats(cells: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    per_path = cells / step
    n = per_path.shape[0]
    mean = per_path.mean(axis=0)
    se = per_path.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def phi_iterate(spec: CFIAPSpec, rates_in: RateFunction, n_paths: int, seed: int,
                path_start: int = 0, engine: str = "auto") -> RateFunction:
    """One application of the mean-rate map: cell-averaged E[λ̃_j] under Poisson inputs."""
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    out = ph_batch(spec, rates_in, n_paths, seed, (), rates_in.n_cells, path_start,
                   rates_in.horizon, engine)
    mean, se = _cell_stats(out["cells"], rates_in.step)
    return RateFunction(rates_in.horizon, np.maximum(mean, 0.0), se)


def solve_fixed_point(spec: CFIAPSpec, n_cells: int = DEFAULT_CELLS, tol: float = 1e-3,
                      max_iter: int = 30, n_paths: int = 20000, seed: int = 0,
                      engine: str = "auto") -> FixedPointResult:
    """Iterate the mean-rate map from the constant guess E[λ(0)].

    Stops once the sup-norm change falls below ``tol`` plus three times the
    largest cell standard error. Iteration ``l`` uses paths
    ``l*n_paths .. (l+1)*n_paths - 1`` so successive iterates are independent.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    horizon = spec.horizon
    current = RateFunction.constant(spec.K, spec.init_mean(),
                                    horizon, n_cells)
    interacting = any(spec.h[j][i].constant != 0.0 for j in range(spec.K) for i in range(spec.K) if i != j)
    deltas, floors = [], []
    for it in range(max_iter):
        nxt = phi_iterate(spec, current, n_paths, seed, it * n_paths, engine)
        deltas.append(nxt.sup_distance(current))
        floors.append(3.0 * float(nxt.stderr.max()))
        current = nxt
        if not interacting:
            # the map ignores its argument: the first image is the fixed point
            return FixedPointResult(current, deltas, floors, True, it + 1)
        if it > 0 and deltas[-1] < tol + floors[-1]:
            return FixedPointResult(current, deltas, floors, True, it + 1)
    return FixedPointResult(current, deltas, floors, False, max_iter)


def ph_arrival_pmf_exact(spec: CFIAPSpec, rates: RateFunction, i: int, t: float,
                         tail: float = 1e-16) -> Pmf:
    """Exact law of Ã_i(t) when every kernel into ``i`` is a nonnegative integer constant.

    Ã_i(t) = Σ_j h_{j→i} · Poisson(∫_0^t rates_j), independent over j.
    """
    dense = np.array([1.0])
    for j in range(spec.K):
        if j == i:
            continue
        w = spec.h[j][i].constant
        if w is None or w < 0 or w != int(w):
            raise ValueError(f"kernel {j}->{i} is not a nonnegative integer constant")
        w = int(w)
        lam = rates.integral(j, t)
        if w == 0 or lam == 0.0:
            continue
        hi = int(sps.poisson.isf(tail, lam)) + 1
        pk = sps.poisson.pmf(np.arange(hi + 1), lam)
        pk /= pk.sum()
        spread = np.zeros(w * hi + 1)
        spread[::w] = pk
        dense = np.convolve(dense, spread)
    dense = np.where(dense < 1e-300, 0.0, dense)
    return Pmf.from_dense(dense / dense.sum())
