# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loops for specs that fit ``KernelModel``.

Arithmetic and draw order mirror ``pyengine.py`` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log1p, fabs, INFINITY, isfinite
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

from ..point_process.thinning import NonFiniteIntensityError, ThinningBoundError

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double BOUND_RTOL = 1e-9

DEF THIN = 0
DEF ROUTE = 1
DEF PH_THIN = 3
DEF PH_ARRIVAL = 4


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t key4(uint64_t seed, uint64_t a, uint64_t b, uint64_t c, uint64_t d) noexcept nogil:
    cdef uint64_t k = mix64(seed)
    k = mix64((k ^ a) + GAMMA)
    k = mix64((k ^ b) + GAMMA)
    k = mix64((k ^ c) + GAMMA)
    k = mix64((k ^ d) + GAMMA)
    return k


cdef inline double next_u(uint64_t* s) noexcept nogil:
    s[0] = s[0] + GAMMA
    return <double>(mix64(s[0]) >> 11) * TWO_M53


cdef inline double phi1(double z) noexcept nogil:
    if z != 0.0:
        return expm1(z) / z
    return 1.0


cdef inline double phi2(double z) noexcept nogil:
    if fabs(z) < 1e-2:
        return 0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z * (1.0 / 720.0))))
    return (expm1(z) - z) / (z * z)


cdef inline double adv(double a, double c, double lam, double dt) noexcept nogil:
    cdef double z = c * dt
    return lam * exp(z) + a * dt * phi1(z)


cdef inline double integ(double a, double c, double lam, double dt) noexcept nogil:
    cdef double z = c * dt
    return lam * dt * phi1(z) + a * dt * dt * phi2(z)


cdef inline double fagg(int relu, double x) noexcept nogil:
    if relu:
        return x if x > 0.0 else 0.0
    return fabs(x)


cdef inline double rate_bound(double a, double c, double lam, double t, double horizon) noexcept nogil:
    cdef double b = adv(a, c, lam, horizon - t)
    if lam > b:
        b = lam
    return b if b > 0.0 else 0.0


cdef inline void integrate_cells(double a, double c, double tl, double lam, double t1,
                                 double* row, double dtc, int n_cells) noexcept nogil:
    cdef int ci = <int>(tl / dtc)
    cdef double ta = tl, tb, edge, la
    if ci > n_cells - 1:
        ci = n_cells - 1
    while ta < t1:
        edge = (ci + 1) * dtc if ci < n_cells - 1 else INFINITY
        tb = t1 if t1 < edge else edge
        la = adv(a, c, lam, ta - tl)
        row[ci] += integ(a, c, la, tb - ta)
        ta = tb
        ci += 1


# ------------------------------------------------------------ indexed heap

cdef inline void heap_swap(int* heap, int* pos, int x, int y) noexcept nogil:
    cdef int t = heap[x]
    heap[x] = heap[y]
    heap[y] = t
    pos[heap[x]] = x
    pos[heap[y]] = y


cdef inline bint less(double* key, int a, int b) noexcept nogil:
    return key[a] < key[b] or (key[a] == key[b] and a < b)


cdef void heap_fix(int* heap, int* pos, double* key, int n, int node) noexcept nogil:
    cdef int x = pos[node], p, l, r, m
    while x > 0:
        p = (x - 1) >> 1
        if less(key, heap[x], heap[p]):
            heap_swap(heap, pos, x, p)
            x = p
        else:
            break
    while True:
        l = 2 * x + 1
        r = l + 1
        m = x
        if l < n and less(key, heap[l], heap[m]):
            m = l
        if r < n and less(key, heap[r], heap[m]):
            m = r
        if m == x:
            break
        heap_swap(heap, pos, x, m)
        x = m


def rmf_paths(km, int M, double horizon, uint64_t seed, int64_t path_start, int n_paths,
              double[:, :, :] init, double[:] obs_times, int n_cells=0, bint record=False):
    cdef int K = km.K
    cdef int MK = M * K
    cdef int n_obs = obs_times.shape[0]
    cdef double[:, :] hm = np.ascontiguousarray(km.h, dtype=np.float64)
    cdef long[:] gk = np.ascontiguousarray(km.g_kind, dtype=np.int_)
    cdef double[:] gv = np.ascontiguousarray(km.g_val, dtype=np.float64)
    cdef double[:] da = np.ascontiguousarray(km.drift_a, dtype=np.float64)
    cdef double[:] dc = np.ascontiguousarray(km.drift_c, dtype=np.float64)
    cdef int relu = km.f_kind == 1

    lam_obs_a = np.zeros((n_paths, n_obs, M, K))
    arr_obs_a = np.zeros((n_paths, n_obs, M, K))
    dep_obs_a = np.zeros((n_paths, n_obs, M, K), dtype=np.int64)
    cells_a = np.zeros((n_paths, K, max(n_cells, 0)))
    final_lam_a = np.zeros((n_paths, M, K))
    final_agg_a = np.zeros((n_paths, M, K))
    final_arr_a = np.zeros((n_paths, M, K))
    final_dep_a = np.zeros((n_paths, M, K), dtype=np.int64)
    n_ev_a = np.zeros(n_paths, dtype=np.int64)
    cdef double[:, :, :, :] lam_obs = lam_obs_a
    cdef double[:, :, :, :] arr_obs = arr_obs_a
    cdef int64_t[:, :, :, :] dep_obs = dep_obs_a
    cdef double[:, :, :] cells = cells_a
    cdef double[:, :, :] final_lam = final_lam_a
    cdef double[:, :, :] final_agg = final_agg_a
    cdef double[:, :, :] final_arr = final_arr_a
    cdef int64_t[:, :, :] final_dep = final_dep_a
    cdef int64_t[:] n_ev = n_ev_a
    log_dep = []
    log_arr = []

    cdef double* lam = <double*>malloc(MK * sizeof(double))
    cdef double* agg = <double*>malloc(MK * sizeof(double))
    cdef double* arr = <double*>malloc(MK * sizeof(double))
    cdef int64_t* dep = <int64_t*>malloc(MK * sizeof(int64_t))
    cdef double* tl = <double*>malloc(MK * sizeof(double))
    cdef double* cand = <double*>malloc(MK * sizeof(double))
    cdef double* bnd = <double*>malloc(MK * sizeof(double))
    cdef uint64_t* thin = <uint64_t*>malloc(MK * sizeof(uint64_t))
    cdef uint64_t* route = <uint64_t*>malloc(MK * sizeof(uint64_t))
    cdef int* heap = <int*>malloc(MK * sizeof(int))
    cdef int* pos = <int*>malloc(MK * sizeof(int))
    cdef double* cellrow = <double*>malloc((n_cells if n_cells > 0 else 1) * K * sizeof(double))

    cdef double dtc = horizon / n_cells if n_cells > 0 else 0.0
    cdef int p, k, kt, n, j, i, v, oi, q, c2
    cdef int64_t path
    cdef double tc, rate, w, old, g, b, newlam, e
    cdef int Mm1 = M - 1

    try:
        for p in range(n_paths):
            path = path_start + p
            for q in range(n_cells * K):
                cellrow[q] = 0.0
            for k in range(MK):
                lam[k] = init[p, k // K, k % K]
                agg[k] = 0.0
                arr[k] = 0.0
                dep[k] = 0
                tl[k] = 0.0
                thin[k] = key4(seed, <uint64_t>path, <uint64_t>(k // K), <uint64_t>(k % K), THIN)
                route[k] = key4(seed, <uint64_t>path, <uint64_t>(k // K), <uint64_t>(k % K), ROUTE)
            for k in range(MK):
                i = k % K
                b = rate_bound(da[i], dc[i], lam[k], 0.0, horizon)
                bnd[k] = b
                if b > 0.0:
                    e = -log1p(-next_u(&thin[k]))
                    cand[k] = 0.0 + e / b
                    if cand[k] > horizon:
                        cand[k] = INFINITY
                else:
                    cand[k] = INFINITY
            for k in range(MK):
                heap[k] = k
                pos[k] = k
                heap_fix(heap, pos, cand, k + 1, k)
            oi = 0
            while True:
                k = heap[0]
                tc = cand[k]
                if tc > horizon:
                    break
                while oi < n_obs and obs_times[oi] < tc:
                    for kt in range(MK):
                        i = kt % K
                        lam_obs[p, oi, kt // K, i] = adv(da[i], dc[i], lam[kt], obs_times[oi] - tl[kt])
                        arr_obs[p, oi, kt // K, i] = arr[kt]
                        dep_obs[p, oi, kt // K, i] = dep[kt]
                    oi += 1
                n = k // K
                j = k % K
                # advance the candidate node
                if n_cells > 0:
                    integrate_cells(da[j], dc[j], tl[k], lam[k], tc, cellrow + j * n_cells, dtc, n_cells)
                newlam = adv(da[j], dc[j], lam[k], tc - tl[k])
                if not isfinite(newlam):
                    raise NonFiniteIntensityError(f"intensity of node {k} became {newlam} at t={tc}")
                lam[k] = newlam
                tl[k] = tc
                rate = lam[k] if lam[k] > 0.0 else 0.0
                if rate > bnd[k] * (1.0 + BOUND_RTOL):
                    raise ThinningBoundError(
                        f"intensity {rate!r} exceeds dominating rate {bnd[k]!r} at t={tc!r} node ({n},{j})")
                n_ev[p] += 1
                if next_u(&thin[k]) * bnd[k] < rate:
                    dep[k] += 1
                    g = gv[j] if gk[j] == 0 else lam[k] + gv[j]
                    lam[k] = g
                    if record:
                        log_dep.append((tc, n, j))
                    for i in range(K):
                        if i == j:
                            continue
                        w = hm[j, i]
                        v = (n + 1 + <int>(next_u(&route[k]) * Mm1)) % M
                        kt = v * K + i
                        if n_cells > 0:
                            integrate_cells(da[i], dc[i], tl[kt], lam[kt], tc, cellrow + i * n_cells, dtc, n_cells)
                        newlam = adv(da[i], dc[i], lam[kt], tc - tl[kt])
                        if not isfinite(newlam):
                            raise NonFiniteIntensityError(f"intensity of node {kt} became {newlam} at t={tc}")
                        lam[kt] = newlam
                        tl[kt] = tc
                        old = agg[kt]
                        agg[kt] = old + w
                        lam[kt] = lam[kt] - fagg(relu, old) + fagg(relu, agg[kt])
                        arr[kt] += w
                        if record:
                            log_arr.append((tc, v, i, j, w))
                        b = rate_bound(da[i], dc[i], lam[kt], tc, horizon)
                        bnd[kt] = b
                        if b > 0.0:
                            e = -log1p(-next_u(&thin[kt]))
                            cand[kt] = tc + e / b
                            if cand[kt] > horizon:
                                cand[kt] = INFINITY
                        else:
                            cand[kt] = INFINITY
                        heap_fix(heap, pos, cand, MK, kt)
                b = rate_bound(da[j], dc[j], lam[k], tc, horizon)
                bnd[k] = b
                if b > 0.0:
                    e = -log1p(-next_u(&thin[k]))
                    cand[k] = tc + e / b
                    if cand[k] > horizon:
                        cand[k] = INFINITY
                else:
                    cand[k] = INFINITY
                heap_fix(heap, pos, cand, MK, k)
            while oi < n_obs:
                for kt in range(MK):
                    i = kt % K
                    lam_obs[p, oi, kt // K, i] = adv(da[i], dc[i], lam[kt], obs_times[oi] - tl[kt])
                    arr_obs[p, oi, kt // K, i] = arr[kt]
                    dep_obs[p, oi, kt // K, i] = dep[kt]
                oi += 1
            for k in range(MK):
                i = k % K
                if n_cells > 0:
                    integrate_cells(da[i], dc[i], tl[k], lam[k], horizon, cellrow + i * n_cells, dtc, n_cells)
                lam[k] = adv(da[i], dc[i], lam[k], horizon - tl[k])
                tl[k] = horizon
                final_lam[p, k // K, i] = lam[k]
                final_agg[p, k // K, i] = agg[k]
                final_arr[p, k // K, i] = arr[k]
                final_dep[p, k // K, i] = dep[k]
            for i in range(K):
                for c2 in range(n_cells):
                    cells[p, i, c2] = cellrow[i * n_cells + c2]
    finally:
        free(lam); free(agg); free(arr); free(dep); free(tl); free(cand); free(bnd)
        free(thin); free(route); free(heap); free(pos); free(cellrow)

    out = dict(lam_obs=lam_obs_a, arr_obs=arr_obs_a, dep_obs=dep_obs_a, cells=cells_a,
               final_lam=final_lam_a, final_agg=final_agg_a, final_arr=final_arr_a,
               final_dep=final_dep_a, n_candidates=n_ev_a)
    if record:
        out["departures"] = np.array(log_dep, dtype=float).reshape(-1, 3)
        out["arrivals"] = np.array(log_arr, dtype=float).reshape(-1, 5)
    return out


cdef inline double next_arrival(double[:, :] rates, int j, double dtr, int n_rc,
                                double t, int* c, double e) noexcept nogil:
    cdef double r, edge, cap
    while c[0] < n_rc:
        r = rates[j, c[0]]
        edge = (c[0] + 1) * dtr
        cap = r * (edge - t)
        if r > 0.0 and e < cap:
            return t + e / r
        if r > 0.0:
            e -= cap
        t = edge
        c[0] += 1
    return INFINITY


def ph_paths(km, double[:, :] rates, double rates_horizon, double horizon, uint64_t seed,
             int64_t path_start, int n_paths, double[:, :] init, double[:] obs_times,
             int n_cells=0):
    cdef int K = km.K
    cdef int n_obs = obs_times.shape[0]
    cdef int n_rc = rates.shape[1]
    cdef double dtr = rates_horizon / n_rc
    cdef double[:, :] hm = np.ascontiguousarray(km.h, dtype=np.float64)
    cdef long[:] gk = np.ascontiguousarray(km.g_kind, dtype=np.int_)
    cdef double[:] gv = np.ascontiguousarray(km.g_val, dtype=np.float64)
    cdef double[:] da = np.ascontiguousarray(km.drift_a, dtype=np.float64)
    cdef double[:] dc = np.ascontiguousarray(km.drift_c, dtype=np.float64)
    cdef int relu = km.f_kind == 1

    lam_obs_a = np.zeros((n_paths, n_obs, K))
    arr_obs_a = np.zeros((n_paths, n_obs, K))
    dep_obs_a = np.zeros((n_paths, n_obs, K), dtype=np.int64)
    cells_a = np.zeros((n_paths, K, max(n_cells, 0)))
    final_lam_a = np.zeros((n_paths, K))
    final_arr_a = np.zeros((n_paths, K))
    final_dep_a = np.zeros((n_paths, K), dtype=np.int64)
    cdef double[:, :, :] lam_obs = lam_obs_a
    cdef double[:, :, :] arr_obs = arr_obs_a
    cdef int64_t[:, :, :] dep_obs = dep_obs_a
    cdef double[:, :, :] cells = cells_a
    cdef double[:, :] final_lam = final_lam_a
    cdef double[:, :] final_arr = final_arr_a
    cdef int64_t[:, :] final_dep = final_dep_a

    cdef uint64_t* ast = <uint64_t*>malloc(K * sizeof(uint64_t))
    cdef double* nxt = <double*>malloc(K * sizeof(double))
    cdef int* ptr = <int*>malloc(K * sizeof(int))
    cdef double* cellrow = <double*>malloc((n_cells if n_cells > 0 else 1) * sizeof(double))
    cdef double dtc = horizon / n_cells if n_cells > 0 else 0.0
    cdef int p, i, j, who, oi, q
    cdef int64_t path, dep
    cdef uint64_t thin
    cdef double lam, agg, arr, tl, own, bnd, tn, rate, w, old, b
    try:
        for p in range(n_paths):
            path = path_start + p
            for i in range(K):
                lam = init[p, i]
                agg = 0.0
                arr = 0.0
                dep = 0
                tl = 0.0
                for q in range(n_cells):
                    cellrow[q] = 0.0
                thin = key4(seed, <uint64_t>path, <uint64_t>i, <uint64_t>i, PH_THIN)
                for j in range(K):
                    if j == i:
                        nxt[j] = INFINITY
                        continue
                    ast[j] = key4(seed, <uint64_t>path, <uint64_t>i, <uint64_t>j, PH_ARRIVAL)
                    ptr[j] = 0
                    nxt[j] = next_arrival(rates, j, dtr, n_rc, 0.0, &ptr[j], -log1p(-next_u(&ast[j])))
                bnd = rate_bound(da[i], dc[i], lam, 0.0, horizon)
                own = 0.0 + (-log1p(-next_u(&thin))) / bnd if bnd > 0.0 else INFINITY
                oi = 0
                while True:
                    tn = own
                    who = -1
                    for j in range(K):
                        if j != i and nxt[j] < tn:
                            tn = nxt[j]
                            who = j
                    if tn > horizon:
                        break
                    while oi < n_obs and obs_times[oi] < tn:
                        lam_obs[p, oi, i] = adv(da[i], dc[i], lam, obs_times[oi] - tl)
                        arr_obs[p, oi, i] = arr
                        dep_obs[p, oi, i] = dep
                        oi += 1
                    if n_cells > 0:
                        integrate_cells(da[i], dc[i], tl, lam, tn, cellrow, dtc, n_cells)
                    lam = adv(da[i], dc[i], lam, tn - tl)
                    if not isfinite(lam):
                        raise NonFiniteIntensityError(f"intensity of node {i} became {lam} at t={tn}")
                    tl = tn
                    if who < 0:
                        rate = lam if lam > 0.0 else 0.0
                        if rate > bnd * (1.0 + BOUND_RTOL):
                            raise ThinningBoundError(
                                f"intensity {rate!r} exceeds dominating rate {bnd!r} at t={tn!r} node {i}")
                        if next_u(&thin) * bnd < rate:
                            dep += 1
                            lam = gv[i] if gk[i] == 0 else lam + gv[i]
                    else:
                        w = hm[who, i]
                        old = agg
                        agg = old + w
                        lam = lam - fagg(relu, old) + fagg(relu, agg)
                        arr += w
                        nxt[who] = next_arrival(rates, who, dtr, n_rc, tn, &ptr[who],
                                                -log1p(-next_u(&ast[who])))
                    bnd = rate_bound(da[i], dc[i], lam, tn, horizon)
                    own = tn + (-log1p(-next_u(&thin))) / bnd if bnd > 0.0 else INFINITY
                while oi < n_obs:
                    lam_obs[p, oi, i] = adv(da[i], dc[i], lam, obs_times[oi] - tl)
                    arr_obs[p, oi, i] = arr
                    dep_obs[p, oi, i] = dep
                    oi += 1
                if n_cells > 0:
                    integrate_cells(da[i], dc[i], tl, lam, horizon, cellrow, dtc, n_cells)
                    for q in range(n_cells):
                        cells[p, i, q] = cellrow[q]
                final_lam[p, i] = adv(da[i], dc[i], lam, horizon - tl)
                final_arr[p, i] = arr
                final_dep[p, i] = dep
    finally:
        free(ast); free(nxt); free(ptr); free(cellrow)
    return dict(lam_obs=lam_obs_a, arr_obs=arr_obs_a, dep_obs=dep_obs_a, cells=cells_a,
                final_lam=final_lam_a, final_arr=final_arr_a, final_dep=final_dep_a)
