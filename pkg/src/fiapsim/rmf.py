"""Replica-mean-field simulation.

Replica and node indices are 0-based throughout: replica ``m`` in ``0..M-1``,
node ``i`` in ``0..K-1``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _core
from ._core import pyengine
from .model import CFIAPSpec
from .point_process.rng import Purpose, RngStream


@dataclass
class ReplicaState:
    """Live state of an M-replica system; ``lam = base + f(agg)`` entrywise."""

    t: float
    lam: np.ndarray  # (M, K)
    agg: np.ndarray  # (M, K)
    base: np.ndarray  # (M, K)


@dataclass
class EventLog:
    """Departures ``(time, replica, node)`` and routed arrivals
    ``(time, target replica, target node, source node, weight)``."""

    departures: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    arrivals: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))

    def departure_count(self, m: int, i: int, t: float) -> int:
        d = self.departures
        return int(np.count_nonzero((d[:, 1] == m) & (d[:, 2] == i) & (d[:, 0] <= t)))

    def to_csv(self) -> str:
        """Merged log, one row per record, in time order (departure first on ties)."""
        rows = [(t, 0, "departure", int(m), int(i), "", "") for t, m, i in self.departures]
        rows += [(t, 1, "arrival", int(m), int(i), int(j), repr(float(w)))
                 for t, m, i, j, w in self.arrivals]
        rows.sort(key=lambda r: (r[0], r[1]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "kind", "replica", "node", "src_node", "weight"])
        for t, _, kind, m, i, j, wt in rows:
            w.writerow([repr(float(t)), kind, m, i, j, wt])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EventLog":
        dep, arr = [], []
        for row in csv.DictReader(io.StringIO(text)):
            t, m, i = float(row["time"]), int(row["replica"]), int(row["node"])
            if row["kind"] == "departure":
                dep.append((t, m, i))
            else:
                arr.append((t, m, i, int(row["src_node"]), float(row["weight"])))
        return cls(np.array(dep, dtype=float).reshape(-1, 3), np.array(arr, dtype=float).reshape(-1, 5))


def route(rng: RngStream, M: int, exclude: int) -> int:
    """Uniform replica index in ``{0..M-1} \\ {exclude}``.

    Offsets are drawn relative to the sender, so cyclic relabelling of replicas
    commutes with routing.
    """
    if M < 2:
        raise ValueError("routing needs M >= 2")
    if not 0 <= exclude < M:
        raise ValueError(f"exclude={exclude} outside 0..{M - 1}")
    return (exclude + 1 + int(rng.uniform() * (M - 1))) % M


def initial_intensities(spec: CFIAPSpec, M: int, seed: int, path_start: int, n_paths: int,
                        independent_init: bool = False) -> np.ndarray:
    """Initial matrix per path, shape ``(n_paths, M, K)``.

    By default node ``i`` starts from one draw ``Z_i`` shared by every replica.
    """
    out = np.empty((n_paths, M, spec.K))
    for i, law in enumerate(spec.init):
        if law.is_constant:
            out[:, :, i] = law.params[0]
            continue
        for p in range(n_paths):
            path = path_start + p
            if independent_init:
                for m in range(M):
                    out[p, m, i] = law.sample(RngStream(seed, (path, m, i, Purpose.INIT)).uniform())
            else:
                out[p, :, i] = law.sample(RngStream(seed, (path, 0, i, Purpose.INIT)).uniform())
    return out


def _engine(spec: CFIAPSpec, engine: str):
    km = spec.kernel_model()
    if engine == "auto":
        engine = "cython" if (km is not None and _core.HAVE_COMPILED) else "python"
    if engine == "cython":
        if km is None:
            raise ValueError("spec does not fit the compiled core")
        if not _core.HAVE_COMPILED:
            raise RuntimeError("compiled core not available")
        return "cython", km
    dyn = pyengine.KernelDynamics(km) if km is not None else pyengine.SpecDynamics(spec)
    return "python", dyn


def rmf_batch(spec: CFIAPSpec, M: int, n_paths: int, seed: int, obs_times: Sequence[float] = (),
              n_cells: int = 0, path_start: int = 0, horizon: Optional[float] = None,
              independent_init: bool = False, engine: str = "auto", record: bool = False,
              debug: bool = False, replica_labels: Optional[Sequence[int]] = None) -> dict:
    """Run ``n_paths`` independent systems; returns arrays keyed by observable.

    ``lam_obs``, ``arr_obs``, ``dep_obs`` have shape ``(n_paths, n_obs, M, K)``;
    ``cells`` holds per-path replica sums of ∫λ over each output cell.
    ``replica_labels`` (Python engine only) makes replica ``m`` consume the
    random streams of replica ``replica_labels[m]``.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    horizon = spec.horizon if horizon is None else float(horizon)
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    obs = np.asarray(obs_times, dtype=float)
    if np.any(obs < 0) or np.any(obs > horizon) or np.any(np.diff(obs) < 0):
        raise ValueError("obs_times must be sorted and inside [0, horizon]")
    init = initial_intensities(spec, M, seed, path_start, n_paths, independent_init)
    kind, model = _engine(spec, engine)
    if kind == "cython":
        if debug or replica_labels is not None:
            raise ValueError("debug checks and relabelling run on the Python engine; "
                             "pass engine='python'")
        return _core.ckernels.rmf_paths(model, M, horizon, seed & ((1 << 64) - 1), path_start,
                                        n_paths, init, obs, n_cells, record)
    return pyengine.rmf_paths(model, M, horizon, seed & ((1 << 64) - 1), path_start, n_paths,
                              init, obs, n_cells, record, debug, replica_labels)


def simulate_rmf(spec: CFIAPSpec, M: int, seed: int, horizon: Optional[float] = None,
                 path: int = 0, independent_init: bool = False, engine: str = "auto",
                 debug: bool = False, replica_labels: Optional[Sequence[int]] = None
                 ) -> tuple[ReplicaState, EventLog]:
    """One M-replica trajectory up to ``horizon`` with its full event log."""
    horizon = spec.horizon if horizon is None else float(horizon)
    out = rmf_batch(spec, M, 1, seed, (), 0, path, horizon, independent_init, engine,
                    record=True, debug=debug, replica_labels=replica_labels)
    lam, agg = out["final_lam"][0], out["final_agg"][0]
    fa = np.vectorize(spec.f)(agg) if agg.size else agg
    state = ReplicaState(horizon, lam, agg, lam - fa)
    return state, EventLog(out["departures"], out["arrivals"])


def arrival_count_paths(log: EventLog, m: int, i: int, grid: Sequence[float]) -> np.ndarray:
    """Cumulative weighted arrivals ``A_{m,i}(t)`` evaluated on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    a = log.arrivals
    sel = a[(a[:, 1] == m) & (a[:, 2] == i)]
    if sel.size == 0:
        return np.zeros_like(grid)
    order = np.argsort(sel[:, 0], kind="stable")
    t, w = sel[order, 0], np.cumsum(sel[order, 4])
    idx = np.searchsorted(t, grid, side="right")
    return np.where(idx > 0, w[np.maximum(idx - 1, 0)], 0.0)


def snapshot_csv(times: Sequence[float], lam_obs: np.ndarray) -> str:
    """Trajectory snapshot table ``time,replica,node,intensity`` for one path."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "replica", "node", "intensity"])
    for o, t in enumerate(times):
        for m in range(lam_obs.shape[1]):
            for i in range(lam_obs.shape[2]):
                w.writerow([repr(float(t)), m, i, repr(float(lam_obs[o, m, i]))])
    return buf.getvalue()
