"""Closed-form Brownian bridge mathematics.

A Brownian bridge between a start point z0 (time 0) and an end point zT
(time T) has the conditional marginal

    z_t | z0, zT  ~  Normal((1 - t/T) z0 + (t/T) zT,  t (T - t) / T)

with a scalar variance applied isotropically across all latent dimensions.
The interpolation is exact at both ends and noisiest at the midpoint.

These functions are pure and f64 throughout; sampling takes an explicit
seed and is safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

DEFAULT_LATENT_DIM = 32

# Keeps the log density finite when evaluated at the degenerate endpoints.
DEFAULT_VAR_FLOOR = 1e-6


def _as_point(z, name: str) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"{name} must be a 1-d vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError(f"{name} contains non-finite entries")
    return z


@dataclass(frozen=True)
class BridgeSchedule:
    """Strictly increasing observation times within the horizon [0, T]."""

    T: float
    times: tuple[float, ...]

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"horizon T must be positive, got {self.T}")
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if not times:
            raise DomainError("schedule has no times")
        if times[0] < 0 or times[-1] > self.T:
            raise DomainError(f"times must lie in [0, {self.T}], got {times[0]}..{times[-1]}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("times must be strictly increasing")

    @classmethod
    def unit_spaced(cls, n_sentences: int) -> "BridgeSchedule":
        """Schedule with one observation per sentence index 0..T, T = n_sentences - 1."""
        if n_sentences < 2:
            raise DomainError("need at least 2 sentences for a pinned schedule")
        T = float(n_sentences - 1)
        return cls(T=T, times=tuple(float(i) for i in range(n_sentences)))


@dataclass(frozen=True)
class BridgeTrajectory:
    """One sampled latent path: points[i] observed at schedule.times[i]."""

    schedule: BridgeSchedule
    points: np.ndarray  # (len(times), d)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[0] != len(self.schedule.times):
            raise DimensionError(
                f"points shape {pts.shape} does not match {len(self.schedule.times)} times"
            )

    def __len__(self) -> int:
        return self.points.shape[0]


def bridge_moments(z0, zT, t: float, T: float) -> tuple[np.ndarray, float]:
    """Conditional mean and scalar variance of the bridge at time t.

    mean = (1 - t/T) z0 + (t/T) zT, variance = t (T - t) / T. The variance
    is isotropic: one scalar for all dimensions.
    """
    z0 = _as_point(z0, "z0")
    zT = _as_point(zT, "zT")
    if z0.shape != zT.shape:
        raise DimensionError(f"z0 has dimension {z0.shape[0]}, zT has {zT.shape[0]}")
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}")
    if not 0 <= t <= T:
        raise DomainError(f"t={t} outside [0, {T}]")
    alpha = t / T
    mean = (1.0 - alpha) * z0 + alpha * zT
    variance = t * (T - t) / T
    return mean, variance


def bridge_log_density(zt, z0, zT, t: float, T: float,
                       var_floor: float = DEFAULT_VAR_FLOOR) -> float:
    """Log of the isotropic Gaussian bridge density at zt.

    The variance from bridge_moments is clamped below by var_floor so the
    value stays finite at t = 0 and t = T.
    """
    if not var_floor > 0:
        raise DomainError(f"var_floor must be positive, got {var_floor}")
    zt = _as_point(zt, "zt")
    mean, variance = bridge_moments(z0, zT, t, T)
    if zt.shape != mean.shape:
        raise DimensionError(f"zt has dimension {zt.shape[0]}, expected {mean.shape[0]}")
    v = max(variance, var_floor)
    d = zt.shape[0]
    sq = float(np.dot(zt - mean, zt - mean))
    return -0.5 * d * math.log(2.0 * math.pi * v) - sq / (2.0 * v)


def sample_bridge(z0, zT, schedule: BridgeSchedule, rng_seed: int) -> BridgeTrajectory:
    """Sample one pinned trajectory at the schedule's times.

    Interior points are drawn sequentially: each step is a fresh bridge from
    the previously sampled point (at its time) to the fixed endpoint zT, which
    is exact for Gaussian bridges and never forms a joint covariance. Points
    at times 0 and T, when present in the schedule, are returned as z0 and zT
    bitwise. Deterministic given rng_seed.
    """
    z0 = _as_point(z0, "z0")
    zT = _as_point(zT, "zT")
    if z0.shape != zT.shape:
        raise DimensionError(f"z0 has dimension {z0.shape[0]}, zT has {zT.shape[0]}")
    T = schedule.T
    rng = np.random.default_rng(rng_seed)
    d = z0.shape[0]

    points = np.empty((len(schedule.times), d), dtype=np.float64)
    prev_t = 0.0
    prev_z = z0
    for i, t in enumerate(schedule.times):
        if t == 0.0:
            points[i] = z0
        elif t == T:
            points[i] = zT
        else:
            # Bridge from (prev_z at prev_t) to (zT at T), evaluated at t.
            span = T - prev_t
            alpha = (t - prev_t) / span
            mean = (1.0 - alpha) * prev_z + alpha * zT
            var = (t - prev_t) * (T - t) / span
            points[i] = mean + math.sqrt(var) * rng.standard_normal(d)
        prev_t = t
        prev_z = points[i]
    return BridgeTrajectory(schedule=schedule, points=points)
