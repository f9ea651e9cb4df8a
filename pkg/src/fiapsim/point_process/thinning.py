"""Thinning sampler, intensity paths and drift integration."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .rng import RngStream

RateMap = Callable[[float], float]

# relative slack for the dominating-rate assertion
BOUND_RTOL = 1e-9


class ThinningBoundError(RuntimeError):
    """Intensity exceeded the dominating rate at a candidate point."""


class NonFiniteIntensityError(FloatingPointError):
    pass


@dataclass
class IntensityPath:
    """Right-continuous piecewise intensity.

    ``pieces`` holds ``(start_time, evaluator)`` pairs sorted by start; the
    evaluator receives the time elapsed since its start.
    """

    pieces: list[tuple[float, RateMap]] = field(default_factory=list)
    clamp: bool = True

    def append(self, start: float, evaluator: RateMap) -> None:
        if self.pieces and start < self.pieces[-1][0]:
            raise ValueError("pieces must be appended in time order")
        self.pieces.append((start, evaluator))

    def __call__(self, t: float) -> float:
        k = bisect.bisect_right([p[0] for p in self.pieces], t) - 1
        if k < 0:
            raise ValueError(f"t={t} precedes the first piece")
        start, ev = self.pieces[k]
        v = ev(t - start)
        return max(v, 0.0) if self.clamp else v


def next_event_thinning(
    intensity: RateMap,
    dominating_rate: float,
    window: tuple[float, float],
    rng: RngStream,
) -> Optional[float]:
    """First accepted point in ``(t0, t1]`` of a thinned rate-``dominating_rate`` stream.

    Returns ``None`` when nothing is accepted before ``t1``.
    """
    t0, t1 = window
    if not math.isfinite(dominating_rate):
        raise ValueError("dominating_rate must be finite")
    if dominating_rate <= 0.0:
        for s in (t0, t1):
            if max(intensity(s), 0.0) > 0.0:
                raise ThinningBoundError(
                    f"dominating_rate={dominating_rate} but intensity({s})={intensity(s)} > 0"
                )
        return None
    t = t0
    while True:
        t += rng.exponential() / dominating_rate
        if t > t1:
            return None
        rate = max(intensity(t), 0.0)
        if not math.isfinite(rate):
            raise NonFiniteIntensityError(f"intensity({t}) = {rate}")
        if rate > dominating_rate * (1.0 + BOUND_RTOL):
            raise ThinningBoundError(
                f"intensity {rate!r} exceeds dominating rate {dominating_rate!r} at t={t!r}"
            )
        if rng.uniform() * dominating_rate < rate:
            return t


def _phi1(z: float) -> float:
    """(e^z - 1)/z, continuous at 0."""
    return math.expm1(z) / z if z != 0.0 else 1.0


def _phi2(z: float) -> float:
    """(e^z - 1 - z)/z^2, continuous at 0."""
    if abs(z) < 1e-2:
        return 0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z * (1.0 / 720.0))))
    return (math.expm1(z) - z) / (z * z)


def affine_advance(a: float, c: float, lam: float, dt: float) -> float:
    """Solve dλ/ds = a + c·λ over an elapsed time ``dt``.

    Written as λe^{c dt} + a·dt·φ1(c dt), which stays accurate as c → 0.
    """
    z = c * dt
    return lam * math.exp(z) + a * dt * _phi1(z)


def affine_integral(a: float, c: float, lam: float, dt: float) -> float:
    """∫_0^dt of the affine solution started at ``lam``."""
    z = c * dt
    return lam * dt * _phi1(z) + a * dt * dt * _phi2(z)


class Drift:
    """Between-event motion dλ/ds = σ(s, λ) − λ of one node."""

    def velocity(self, s: float, lam: float) -> float:
        raise NotImplementedError

    def advance(self, lam: float, t0: float, dt: float) -> float:
        raise NotImplementedError

    def integral(self, lam: float, t0: float, dt: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class AffineDrift(Drift):
    """σ(λ) − λ = a + c·λ, integrated in closed form."""

    a: float
    c: float

    def velocity(self, s, lam):
        return self.a + self.c * lam

    def advance(self, lam, t0, dt):
        return affine_advance(self.a, self.c, lam, dt)

    def integral(self, lam, t0, dt):
        return affine_integral(self.a, self.c, lam, dt)

    def sup_over(self, lam: float, dt: float) -> float:
        # affine flows are monotone, so the sup sits at an endpoint
        return max(lam, self.advance(lam, 0.0, dt))


@dataclass(frozen=True)
class RK4Drift(Drift):
    """General drift integrated with fixed-step RK4."""

    fn: Callable[[float, float], float]
    step: float = 1e-3

    def velocity(self, s, lam):
        return self.fn(s, lam)

    def _run(self, lam: float, t0: float, dt: float) -> tuple[float, float]:
        n = max(1, math.ceil(dt / self.step - 1e-9)) if dt > 0 else 0
        h = dt / n if n else 0.0
        s, y, acc = t0, lam, 0.0
        f = self.fn
        for _ in range(n):
            # RK4 on the pair (λ, ∫λ)
            y2 = y + 0.5 * h * (k1 := f(s, y))
            y3 = y + 0.5 * h * (k2 := f(s + 0.5 * h, y2))
            y4 = y + h * (k3 := f(s + 0.5 * h, y3))
            k4 = f(s + h, y4)
            acc += h * (y + 2 * y2 + 2 * y3 + y4) / 6.0
            y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            s = s + h
            if not math.isfinite(y):
                raise NonFiniteIntensityError(f"drift produced {y} at s={s}")
        return y, acc

    def advance(self, lam, t0, dt):
        return self._run(lam, t0, dt)[0]

    def integral(self, lam, t0, dt):
        return self._run(lam, t0, dt)[1]


def integrate_drift(
    lam0: float,
    drift: Drift | Callable[[float, float], float],
    t0: float,
    t1: float,
    step: float = 1e-3,
) -> float:
    """Intensity at ``t1`` under drift only, started from ``lam0`` at ``t0``."""
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if not isinstance(drift, Drift):
        drift = RK4Drift(drift, step)
    out = drift.advance(lam0, t0, t1 - t0)
    if not math.isfinite(out):
        raise NonFiniteIntensityError(f"drift produced {out}")
    return out
