"""Verification statistics: TV distances, TLLN deviations, Chen-Stein bound,
independence gaps, log-log slope fits and moment checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

N_BOOT = 1000
_BOOT_SEED = 20240601


@dataclass(frozen=True)
class Pmf:
    """Finite probability mass function over integers."""

    support: np.ndarray  # int64, sorted, unique
    probs: np.ndarray

    def __post_init__(self):
        if self.support.shape != self.probs.shape:
            raise ValueError("support and probs must align")
        if np.any(self.probs < -1e-15):
            raise ValueError("negative mass")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {self.probs.sum()!r}, not 1")

    @classmethod
    def from_dict(cls, d: Mapping[int, float]) -> "Pmf":
        keys = sorted(d)
        return cls(np.array(keys, dtype=np.int64), np.array([d[k] for k in keys], dtype=float))

    @classmethod
    def from_dense(cls, probs: np.ndarray, offset: int = 0, normalize_tol: float = 1e-12) -> "Pmf":
        probs = np.asarray(probs, dtype=float)
        keep = probs != 0.0
        sup = np.arange(offset, offset + probs.size, dtype=np.int64)[keep]
        return cls(sup, probs[keep])

    def as_dict(self) -> dict[int, float]:
        return {int(k): float(p) for k, p in zip(self.support, self.probs)}

    def __getitem__(self, k: int) -> float:
        idx = np.searchsorted(self.support, k)
        if idx < self.support.size and self.support[idx] == k:
            return float(self.probs[idx])
        return 0.0

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))


@dataclass(frozen=True)
class EmpiricalPmf:
    """Integer sample counts."""

    support: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_samples(cls, x: Sequence[int]) -> "EmpiricalPmf":
        x = np.asarray(x)
        if x.size == 0:
            raise ValueError("empty sample")
        xi = np.rint(x).astype(np.int64)
        if np.any(xi != x):
            raise ValueError("samples must be integer-valued")
        sup, cnt = np.unique(xi, return_counts=True)
        return cls(sup, cnt)

    def to_pmf(self) -> Pmf:
        if self.n == 0:
            raise ValueError("empty sample")
        return Pmf(self.support.astype(np.int64), self.counts / self.n)


PmfLike = Union[Pmf, EmpiricalPmf, Mapping[int, float]]


def _as_pmf(p: PmfLike) -> Pmf:
    if isinstance(p, Pmf):
        return p
    if isinstance(p, EmpiricalPmf):
        return p.to_pmf()
    return Pmf.from_dict(p)


def tv_discrete(p: PmfLike, q: PmfLike) -> float:
    """Half-L1 distance over the union of supports."""
    p, q = _as_pmf(p), _as_pmf(q)
    sup = np.union1d(p.support, q.support)
    pp = np.zeros(sup.size)
    qq = np.zeros(sup.size)
    pp[np.searchsorted(sup, p.support)] = p.probs
    qq[np.searchsorted(sup, q.support)] = q.probs
    return float(min(1.0, 0.5 * np.abs(pp - qq).sum()))


def equal_mass_edges(pooled: np.ndarray, n_bins: int) -> np.ndarray:
    """Interior edges of ``n_bins`` equal-mass bins; ties collapse duplicate edges."""
    qs = np.quantile(pooled, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    return np.unique(qs)


def _bin(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, x, side="right")


def tv_binned(x: np.ndarray, y: np.ndarray, n_bins: int = 64) -> float:
    """TV between two continuous samples on shared equal-mass bins of the pooled sample."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    edges = equal_mass_edges(np.concatenate([x, y]), n_bins)
    nb = edges.size + 1
    hx = np.bincount(_bin(x, edges), minlength=nb) / x.size
    hy = np.bincount(_bin(y, edges), minlength=nb) / y.size
    return float(0.5 * np.abs(hx - hy).sum())


def _as_clusters(x) -> np.ndarray:
    x = np.asarray(x)
    return x.reshape(-1, 1) if x.ndim == 1 else x.reshape(x.shape[0], -1)


def _boot_weights(rng, n: int, n_boot: int, chunk: int = 100):
    """Yield chunks of bootstrap resampling multiplicities over ``n`` units."""
    done = 0
    while done < n_boot:
        b = min(chunk, n_boot - done)
        yield rng.multinomial(n, np.full(n, 1.0 / n), size=b).astype(float)
        done += b


def _cluster_counts(codes: np.ndarray, n_cat: int) -> np.ndarray:
    """Per-cluster category counts, shape ``(n_clusters, n_cat)``."""
    n, per = codes.shape
    flat = codes + n_cat * np.arange(n)[:, None]
    return np.bincount(flat.ravel(), minlength=n * n_cat).reshape(n, n_cat).astype(float)


def _tv_with_cluster_boot(cx: np.ndarray, ref: np.ndarray, ref_boot, n_boot: int, rng) -> tuple[float, float]:
    """Plug-in TV between pooled cluster counts ``cx`` and reference probabilities.

    ``ref_boot(b)`` returns ``b`` bootstrap replicates of the reference (or the
    fixed reference for an exact law).
    """
    tot = cx.sum()
    tv = 0.5 * np.abs(cx.sum(axis=0) / tot - ref).sum()
    reps = []
    for W in _boot_weights(rng, cx.shape[0], n_boot):
        c = W @ cx
        p = c / c.sum(axis=1, keepdims=True)
        reps.append(0.5 * np.abs(p - ref_boot(W.shape[0])).sum(axis=1))
    return float(tv), float(np.concatenate(reps).std(ddof=1))


def tv_discrete_clustered(samples, q: PmfLike, n_boot: int = N_BOOT,
                          seed: int = _BOOT_SEED) -> tuple[float, float]:
    """TV between the pooled empirical law of integer ``samples`` and an exact pmf.

    ``samples`` of shape ``(n_paths, per_path)`` are resampled by whole rows,
    so within-path dependence is reflected in the stderr.
    """
    x = _as_clusters(samples)
    xi = np.rint(x).astype(np.int64)
    if np.any(xi != x):
        raise ValueError("samples must be integer-valued")
    if x.size == 0:
        raise ValueError("empty sample")
    q = _as_pmf(q)
    sup = np.union1d(np.unique(xi), q.support)
    codes = np.searchsorted(sup, xi)
    qq = np.zeros(sup.size)
    qq[np.searchsorted(sup, q.support)] = q.probs
    cx = _cluster_counts(codes, sup.size)
    rng = np.random.default_rng(seed)
    if x.shape[1] == 1:
        pooled = cx.sum(axis=0)
        tv = 0.5 * np.abs(pooled / pooled.sum() - qq).sum()
        boots = rng.multinomial(int(pooled.sum()), pooled / pooled.sum(), size=n_boot) / pooled.sum()
        return float(tv), float((0.5 * np.abs(boots - qq).sum(axis=1)).std(ddof=1))
    return _tv_with_cluster_boot(cx, qq, lambda b: qq, n_boot, rng)


def tv_binned_clustered(x, y, n_bins: int = 64, n_boot: int = N_BOOT,
                        seed: int = _BOOT_SEED) -> dict:
    """Binned TV between pooled ``x`` (rows = paths) and an i.i.d. sample ``y``.

    Bins are equal-mass on the pooled sample, with tied edges merged. Reports
    the bootstrap stderr and half/double-bin sensitivity.
    """
    xc = np.asarray(_as_clusters(x), dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if xc.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    edges = equal_mass_edges(np.concatenate([xc.ravel(), y]), n_bins)
    nb = edges.size + 1
    cx = _cluster_counts(_bin(xc, edges), nb)
    hy = np.bincount(_bin(y, edges), minlength=nb)
    py = hy / y.size
    rng = np.random.default_rng(seed)
    ref_boot = lambda b: rng.multinomial(y.size, py, size=b) / y.size
    tv, se = _tv_with_cluster_boot(cx, py, ref_boot, n_boot, rng)
    return {
        "tv": tv,
        "stderr": se,
        "tv_half_bins": tv_binned(xc.ravel(), y, max(2, n_bins // 2)),
        "tv_double_bins": tv_binned(xc.ravel(), y, n_bins * 2),
        "n_bins_effective": int(nb),
    }


def _bootstrap_mean_se(values: np.ndarray, n_boot: int = N_BOOT, seed: int = _BOOT_SEED) -> float:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    return float(values[idx].mean(axis=1).std(ddof=1))


def tlln_deviation(counts: np.ndarray, n_boot: int = N_BOOT, seed: int = _BOOT_SEED) -> tuple[float, float]:
    """Estimate E|(1/(M-1)) Σ_n (N_n - E N)| from ``counts`` of shape (replications, M).

    Returns ``(estimate, bootstrap stderr)``. E N is the grand mean, which is
    legitimate because the replicas are exchangeable.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2:
        raise ValueError("counts must be (replications, M)")
    R, M = counts.shape
    if M < 2:
        raise ValueError("M must be >= 2")
    if R < 2:
        raise ValueError("need at least 2 replications")
    dev = np.abs((counts - counts.mean()).sum(axis=1)) / (M - 1)
    return float(dev.mean()), _bootstrap_mean_se(dev, n_boot, seed)


def chen_stein_rhs(counts: np.ndarray, M: Optional[int] = None, m: int = 0) -> float:
    """Plug-in value of the Chen-Stein bound (up to its constant) from per-replica counts.

    ``counts`` has shape (replications, M); replica ``m`` is the receiver and is
    left out of the fluctuation sum.
    """
    counts = np.asarray(counts, dtype=float)
    R, Mc = counts.shape
    M = Mc if M is None else M
    if M < 2:
        raise ValueError("M must be >= 2")
    EN = counts.mean()
    others = np.delete(counts, m, axis=1)
    fluct = np.abs((EN - others).sum(axis=1)).mean() / (M - 1)
    first = min(1.0, 0.74 / math.sqrt(EN)) * fluct if EN > 0 else 0.0
    second = min(1.0, 1.0 / EN) * EN / (M - 1) if EN > 0 else 0.0
    return float(first + second)


def _category_codes(x: np.ndarray, bins: int) -> np.ndarray:
    edges = equal_mass_edges(x.ravel(), bins)
    raw = _bin(x, edges)
    _, codes = np.unique(raw, return_inverse=True)
    return codes.reshape(x.shape)


def independence_gap(x, y, bins: int = 4, n_boot: int = N_BOOT,
                     seed: int = _BOOT_SEED) -> tuple[float, float]:
    """sup over bin pairs of |P(X∈B1, Y∈B2) - P(X∈B1) P(Y∈B2)| with bootstrap stderr.

    Bins are equal-mass per coordinate, with tied edges merged, so atoms do
    not produce empty bins. The stderr is that of the signed deviation in the
    maximising cell. 2-d inputs are paired draws grouped by path (rows), and
    resampling is by whole rows.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape:
        raise ValueError("x and y must be paired")
    if x.size < 1000:
        raise ValueError("need at least 1000 samples")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x, y = _as_clusters(x), _as_clusters(y)
    cx, cy = _category_codes(x, bins), _category_codes(y, bins)
    nx, ny = int(cx.max()) + 1, int(cy.max()) + 1
    if nx < 2 or ny < 2:
        raise ValueError("degenerate binning: a marginal has fewer than two non-empty bins")
    C = _cluster_counts(cx * ny + cy, nx * ny)

    def deviation(J):
        J = J.reshape(J.shape[0], nx, ny) / J.sum(axis=1).reshape(-1, 1, 1)
        return (J - J.sum(axis=2)[:, :, None] * J.sum(axis=1)[:, None, :]).reshape(J.shape[0], -1)

    D = deviation(C.sum(axis=0, keepdims=True))[0]
    k = int(np.argmax(np.abs(D)))
    rng = np.random.default_rng(seed)
    if x.shape[1] == 1:
        # resampling single draws is a multinomial over cells
        boots = rng.multinomial(C.shape[0], C.sum(axis=0) / C.shape[0], size=n_boot).astype(float)
        reps = deviation(boots)[:, k]
    else:
        reps = np.concatenate([deviation(W @ C)[:, k]
                               for W in _boot_weights(rng, C.shape[0], n_boot)])
    return float(abs(D[k])), float(reps.std(ddof=1))


@dataclass(frozen=True)
class SlopeFit:
    log_M: np.ndarray
    log_d: np.ndarray
    slope: float
    intercept: float
    residual_rms: float

    @property
    def constant(self) -> float:
        """Fitted prefactor C in d ≈ C · M^slope."""
        return math.exp(self.intercept)


def loglog_slope(M_values: Sequence[float], distances: Sequence[float]) -> SlopeFit:
    """Least-squares line through (log M, log d); nonpositive distances are dropped."""
    M_values = np.asarray(M_values, dtype=float)
    d = np.asarray(distances, dtype=float)
    keep = d > 0
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} nonpositive distances from slope fit")
    if keep.sum() < 3:
        raise ValueError("need at least 3 positive distances")
    lx, ly = np.log(M_values[keep]), np.log(d[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return SlopeFit(lx, ly, float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2))))


@dataclass(frozen=True)
class MomentCheck:
    p: int
    empirical: float
    stderr: float
    bound: Optional[float]
    ok: Optional[bool]


def moment_check(samples: np.ndarray, p: int = 1, init_mean: Optional[float] = None,
                 K: Optional[int] = None, H: Optional[float] = None, t: Optional[float] = None,
                 dominated: bool = False) -> MomentCheck:
    """Empirical p-th moment of intensity samples against the Grönwall ceiling.

    The ceiling ``E[λ(0)] e^{(K-1) H t}`` is asserted only for p = 1 on
    dominated (no-drift, no-reset) dynamics; otherwise values are reported.
    """
    x = np.asarray(samples, dtype=float).ravel()
    vals = x ** p
    emp = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    if p == 1 and None not in (init_mean, K, H, t):
        bound = init_mean * math.exp((K - 1) * H * t)
        ok = (emp <= bound + 3 * se) if dominated else None
        return MomentCheck(p, emp, se, bound, ok)
    return MomentCheck(p, emp, se, None, None)


def exp_moment_stability(samples: np.ndarray, xi: float) -> dict:
    """MC estimate of E[exp(ξλ)] on the first half vs the full sample."""
    x = np.asarray(samples, dtype=float).ravel()
    with np.errstate(over="raise"):
        e = np.exp(xi * x)
    half = e[: x.size // 2].mean()
    full = e.mean()
    se = e.std(ddof=1) / math.sqrt(e.size)
    return {"xi": xi, "half": float(half), "full": float(full), "stderr": float(se),
            "finite": bool(np.isfinite(full)), "rel_change": float(abs(full - half) / full)}
