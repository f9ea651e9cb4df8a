"""Pure-Python event engines (fallback and reference for the compiled core).

Every random draw and every floating-point expression here is mirrored in
``_ckernels.pyx``; for specs that fit :class:`~fiapsim.model.KernelModel` the two
produce bit-identical output.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from ..point_process.rng import GAMMA, MASK64, Purpose, mix64, stream_key
from ..point_process.thinning import (
    BOUND_RTOL,
    AffineDrift,
    NonFiniteIntensityError,
    ThinningBoundError,
    affine_advance,
    affine_integral,
)

_TWO_M53 = 1.0 / 9007199254740992.0
INF = math.inf


class _Stream:
    __slots__ = ("s",)

    def __init__(self, key):
        self.s = key

    def u(self):
        self.s = (self.s + GAMMA) & MASK64
        return (mix64(self.s) >> 11) * _TWO_M53


class KernelDynamics:
    """Dynamics of a :class:`KernelModel`, arithmetic identical to the C core."""

    def __init__(self, km):
        self.K = km.K
        self.hm = km.h.tolist()
        self.relu = km.f_kind == 1
        self.gk = km.g_kind.tolist()
        self.gv = km.g_val.tolist()
        self.a = km.drift_a.tolist()
        self.c = km.drift_c.tolist()

    def f(self, x):
        if self.relu:
            return x if x > 0.0 else 0.0
        return abs(x)

    def frag(self, i, t, lam):
        return self.gv[i] if self.gk[i] == 0 else lam + self.gv[i]

    def h(self, j, i, t):
        return self.hm[j][i]

    def advance(self, i, t0, lam, dt):
        return affine_advance(self.a[i], self.c[i], lam, dt)

    def integral(self, i, t0, lam, dt):
        return affine_integral(self.a[i], self.c[i], lam, dt)

    def bound(self, i, t, lam, horizon):
        b = affine_advance(self.a[i], self.c[i], lam, horizon - t)
        if lam > b:
            b = lam
        return b if b > 0.0 else 0.0


class SpecDynamics:
    """Dynamics evaluated straight from a spec's expressions."""

    def __init__(self, spec):
        self.K = spec.K
        self.spec = spec
        self.drifts = [spec.drift(i) for i in range(spec.K)]
        self.hc = spec.h_const()
        self.rb = spec.rate_bound

    def f(self, x):
        return self.spec.f(x)

    def frag(self, i, t, lam):
        return self.spec.g[i](t, lam)

    def h(self, j, i, t):
        if self.hc is not None:
            return float(self.hc[j, i])
        return self.spec.h[j][i](t)

    def advance(self, i, t0, lam, dt):
        return self.drifts[i].advance(lam, t0, dt)

    def integral(self, i, t0, lam, dt):
        return self.drifts[i].integral(lam, t0, dt)

    def bound(self, i, t, lam, horizon):
        if self.rb is not None:
            b = self.rb[i](t, lam)
        elif isinstance(self.drifts[i], AffineDrift):
            b = self.drifts[i].advance(lam, t, horizon - t)
            if lam > b:
                b = lam
        else:
            b = lam
        return b if b > 0.0 else 0.0


def _integrate_cells(dyn, i, tl, lam, t1, cells, row, dtc, n_cells):
    """Add ∫_{tl}^{t1} λ to ``cells[row, i, :]`` split at cell edges."""
    c = min(int(tl / dtc), n_cells - 1)
    ta = tl
    while ta < t1:
        edge = (c + 1) * dtc if c < n_cells - 1 else INF
        tb = t1 if t1 < edge else edge
        la = dyn.advance(i, tl, lam, ta - tl)
        cells[row, i, c] += dyn.integral(i, ta, la, tb - ta)
        ta = tb
        c += 1


def rmf_paths(dyn, M, horizon, seed, path_start, n_paths, init, obs_times,
              n_cells=0, record=False, debug=False, replica_labels=None):
    """Simulate ``n_paths`` independent M-replica systems; see ``fiapsim.rmf``.

    ``replica_labels[m]`` names the replica whose random streams replica ``m``
    consumes (identity by default).
    """
    labels = list(range(M)) if replica_labels is None else [int(x) for x in replica_labels]
    K = dyn.K
    MK = M * K
    n_obs = len(obs_times)
    lam_obs = np.zeros((n_paths, n_obs, M, K))
    arr_obs = np.zeros((n_paths, n_obs, M, K))
    dep_obs = np.zeros((n_paths, n_obs, M, K), dtype=np.int64)
    cells = np.zeros((n_paths, K, max(n_cells, 0)))
    final_lam = np.zeros((n_paths, M, K))
    final_agg = np.zeros((n_paths, M, K))
    final_arr = np.zeros((n_paths, M, K))
    final_dep = np.zeros((n_paths, M, K), dtype=np.int64)
    n_events = np.zeros(n_paths, dtype=np.int64)
    dtc = horizon / n_cells if n_cells > 0 else 0.0
    log_dep, log_arr = [], []
    f = dyn.f
    Mm1 = M - 1

    for p in range(n_paths):
        path = path_start + p
        lam = [float(init[p, k // K, k % K]) for k in range(MK)]
        agg = [0.0] * MK
        base = list(lam)
        arr = [0.0] * MK
        dep = [0] * MK
        tl = [0.0] * MK
        cand = [INF] * MK
        bnd = [0.0] * MK
        version = [0] * MK
        thin = [_Stream(stream_key(seed, path, labels[k // K], k % K, int(Purpose.THIN)))
                for k in range(MK)]
        route = [_Stream(stream_key(seed, path, labels[k // K], k % K, int(Purpose.ROUTE)))
                 for k in range(MK)]
        heap = []

        def advance(k, t):
            i = k % K
            if n_cells > 0:
                _integrate_cells(dyn, i, tl[k], lam[k], t, cells, p, dtc, n_cells)
            new = dyn.advance(i, tl[k], lam[k], t - tl[k])
            if not math.isfinite(new):
                raise NonFiniteIntensityError(f"intensity of node {k} became {new} at t={t}")
            if debug:
                base[k] += new - lam[k]
            lam[k] = new
            tl[k] = t

        def schedule(k, t):
            b = dyn.bound(k % K, t, lam[k], horizon)
            bnd[k] = b
            version[k] += 1
            if b > 0.0:
                e = -math.log1p(-thin[k].u())
                cand[k] = t + e / b
                if cand[k] <= horizon:
                    heapq.heappush(heap, (cand[k], k, version[k]))
            else:
                cand[k] = INF

        for k in range(MK):
            schedule(k, 0.0)
        oi = 0
        while heap:
            tc, k, ver = heap[0]
            if ver != version[k]:
                heapq.heappop(heap)
                continue
            while oi < n_obs and obs_times[oi] < tc:
                _snapshot(dyn, p, oi, obs_times[oi], lam, tl, arr, dep, lam_obs, arr_obs, dep_obs, M, K)
                oi += 1
            heapq.heappop(heap)
            n = k // K
            j = k % K
            advance(k, tc)
            rate = lam[k] if lam[k] > 0.0 else 0.0
            if rate > bnd[k] * (1.0 + BOUND_RTOL):
                raise ThinningBoundError(
                    f"intensity {rate!r} exceeds dominating rate {bnd[k]!r} at t={tc!r} node ({n},{j})")
            n_events[p] += 1
            if thin[k].u() * bnd[k] < rate:
                dep[k] += 1
                g = dyn.frag(j, tc, lam[k])
                if debug:
                    base[k] = g - f(agg[k])
                lam[k] = g
                if record:
                    log_dep.append((tc, n, j))
                for i in range(K):
                    if i == j:
                        continue
                    w = dyn.h(j, i, tc)
                    v = (n + 1 + int(route[k].u() * Mm1)) % M
                    kt = v * K + i
                    advance(kt, tc)
                    old = agg[kt]
                    agg[kt] = old + w
                    lam[kt] = lam[kt] - f(old) + f(agg[kt])
                    arr[kt] += w
                    if record:
                        log_arr.append((tc, v, i, j, w))
                    if debug:
                        _check_identity(lam[kt], base[kt], f(agg[kt]), tc, kt)
                    schedule(kt, tc)
                if debug:
                    _check_identity(lam[k], base[k], f(agg[k]), tc, k)
            schedule(k, tc)
        while oi < n_obs:
            _snapshot(dyn, p, oi, obs_times[oi], lam, tl, arr, dep, lam_obs, arr_obs, dep_obs, M, K)
            oi += 1
        for k in range(MK):
            advance(k, horizon)
            final_lam[p, k // K, k % K] = lam[k]
            final_agg[p, k // K, k % K] = agg[k]
            final_arr[p, k // K, k % K] = arr[k]
            final_dep[p, k // K, k % K] = dep[k]

    out = dict(lam_obs=lam_obs, arr_obs=arr_obs, dep_obs=dep_obs, cells=cells,
               final_lam=final_lam, final_agg=final_agg, final_arr=final_arr,
               final_dep=final_dep, n_candidates=n_events)
    if record:
        out["departures"] = np.array(log_dep, dtype=float).reshape(-1, 3)
        out["arrivals"] = np.array(log_arr, dtype=float).reshape(-1, 5)
    return out


def _check_identity(lam, base, fa, t, k):
    if abs(lam - (base + fa)) > 1e-9 * max(1.0, abs(lam)):
        raise AssertionError(f"reconstruction identity broken at node {k}, t={t}: "
                             f"lam={lam} base={base} f(agg)={fa}")


def _snapshot(dyn, p, oi, t, lam, tl, arr, dep, lam_obs, arr_obs, dep_obs, M, K):
    for k in range(M * K):
        m, i = divmod(k, K)
        lam_obs[p, oi, m, i] = dyn.advance(i, tl[k], lam[k], t - tl[k])
        arr_obs[p, oi, m, i] = arr[k]
        dep_obs[p, oi, m, i] = dep[k]


def _next_arrival(rates_j, dtr, n_rc, t, c, e):
    """Inverse of the piecewise-constant cumulative rate from ``t`` in cell ``c``."""
    while c < n_rc:
        r = rates_j[c]
        edge = (c + 1) * dtr
        cap = r * (edge - t)
        if r > 0.0 and e < cap:
            return t + e / r, c
        if r > 0.0:
            e -= cap
        t = edge
        c += 1
    return INF, c


def ph_paths(dyn, rates, rates_horizon, horizon, seed, path_start, n_paths, init,
             obs_times, n_cells=0, node_labels=None):
    """Poisson-Hypothesis dynamics: each node driven by independent Poisson inputs.

    ``node_labels[i]`` names the node whose random streams node ``i`` consumes.
    """
    K = dyn.K
    lab = list(range(K)) if node_labels is None else [int(x) for x in node_labels]
    n_obs = len(obs_times)
    n_rc = rates.shape[1]
    dtr = rates_horizon / n_rc
    rl = rates.tolist()
    lam_obs = np.zeros((n_paths, n_obs, K))
    arr_obs = np.zeros((n_paths, n_obs, K))
    dep_obs = np.zeros((n_paths, n_obs, K), dtype=np.int64)
    cells = np.zeros((n_paths, K, max(n_cells, 0)))
    final_lam = np.zeros((n_paths, K))
    final_arr = np.zeros((n_paths, K))
    final_dep = np.zeros((n_paths, K), dtype=np.int64)
    dtc = horizon / n_cells if n_cells > 0 else 0.0
    f = dyn.f

    for p in range(n_paths):
        path = path_start + p
        for i in range(K):
            lam = float(init[p, i])
            agg = 0.0
            arr = 0.0
            dep = 0
            tl = 0.0
            thin = _Stream(stream_key(seed, path, lab[i], lab[i], int(Purpose.PH_THIN)))
            src = [j for j in range(K) if j != i]
            ast = {j: _Stream(stream_key(seed, path, lab[i], lab[j], int(Purpose.PH_ARRIVAL)))
                   for j in src}
            nxt = {}
            ptr = {}
            for j in src:
                nxt[j], ptr[j] = _next_arrival(rl[j], dtr, n_rc, 0.0, 0, -math.log1p(-ast[j].u()))

            def draw_own(t, lam):
                b = dyn.bound(i, t, lam, horizon)
                if b > 0.0:
                    return t + -math.log1p(-thin.u()) / b, b
                return INF, b

            own, bnd = draw_own(0.0, lam)
            oi = 0
            while True:
                tn, who = own, -1
                for j in src:
                    if nxt[j] < tn:
                        tn, who = nxt[j], j
                if tn > horizon:
                    break
                while oi < n_obs and obs_times[oi] < tn:
                    lam_obs[p, oi, i] = dyn.advance(i, tl, lam, obs_times[oi] - tl)
                    arr_obs[p, oi, i] = arr
                    dep_obs[p, oi, i] = dep
                    oi += 1
                if n_cells > 0:
                    _integrate_cells(dyn, i, tl, lam, tn, cells, p, dtc, n_cells)
                lam = dyn.advance(i, tl, lam, tn - tl)
                if not math.isfinite(lam):
                    raise NonFiniteIntensityError(f"intensity of node {i} became {lam} at t={tn}")
                tl = tn
                if who < 0:
                    rate = lam if lam > 0.0 else 0.0
                    if rate > bnd * (1.0 + BOUND_RTOL):
                        raise ThinningBoundError(
                            f"intensity {rate!r} exceeds dominating rate {bnd!r} at t={tn!r} node {i}")
                    if thin.u() * bnd < rate:
                        dep += 1
                        lam = dyn.frag(i, tn, lam)
                else:
                    w = dyn.h(who, i, tn)
                    old = agg
                    agg = old + w
                    lam = lam - f(old) + f(agg)
                    arr += w
                    nxt[who], ptr[who] = _next_arrival(rl[who], dtr, n_rc, tn, ptr[who],
                                                       -math.log1p(-ast[who].u()))
                own, bnd = draw_own(tn, lam)
            while oi < n_obs:
                lam_obs[p, oi, i] = dyn.advance(i, tl, lam, obs_times[oi] - tl)
                arr_obs[p, oi, i] = arr
                dep_obs[p, oi, i] = dep
                oi += 1
            if n_cells > 0:
                _integrate_cells(dyn, i, tl, lam, horizon, cells, p, dtc, n_cells)
            final_lam[p, i] = dyn.advance(i, tl, lam, horizon - tl)
            final_arr[p, i] = arr
            final_dep[p, i] = dep
    return dict(lam_obs=lam_obs, arr_obs=arr_obs, dep_obs=dep_obs, cells=cells,
                final_lam=final_lam, final_arr=final_arr, final_dep=final_dep)
