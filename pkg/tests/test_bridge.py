import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codebridge.bridge import (
    BridgeSchedule,
    BridgeTrajectory,
    bridge_log_density,
    bridge_moments,
    sample_bridge,
)
from codebridge.errors import DimensionError, DomainError


def gaussian_logpdf_oracle(x, mean, var):
    # Independent scalar-arithmetic evaluation of the isotropic normal.
    acc = 0.0
    for xi, mi in zip(x, mean):
        acc += -0.5 * math.log(2.0 * math.pi * var) - (xi - mi) ** 2 / (2.0 * var)
    return acc


class TestMoments:
    def test_endpoint_pin(self):
        z0 = np.arange(4.0)
        zT = np.full(4, 7.0)
        mean, var = bridge_moments(z0, zT, t=0.0, T=4.0)
        assert np.array_equal(mean, z0)
        assert var == 0.0
        mean, var = bridge_moments(z0, zT, t=4.0, T=4.0)
        assert np.array_equal(mean, zT)
        assert var == 0.0

    def test_quarter_point(self):
        # Direct substitution: t=1, T=4, z0=0, zT=4 per dimension.
        d = 5
        mean, var = bridge_moments(np.zeros(d), np.full(d, 4.0), t=1.0, T=4.0)
        assert np.allclose(mean, np.ones(d))
        assert var == pytest.approx(0.75)

    def test_midpoint_is_average_and_noisiest(self):
        rng = np.random.default_rng(0)
        z0, zT = rng.normal(size=8), rng.normal(size=8)
        T = 6.0
        mean, var = bridge_moments(z0, zT, t=T / 2, T=T)
        assert np.allclose(mean, (z0 + zT) / 2)
        assert var == pytest.approx(T / 4)
        for t in (0.5, 1.7, 2.9, 4.4, 5.5):
            assert bridge_moments(z0, zT, t, T)[1] <= var

    def test_domain_errors(self):
        z = np.zeros(3)
        with pytest.raises(DomainError):
            bridge_moments(z, z, t=-0.1, T=1.0)
        with pytest.raises(DomainError):
            bridge_moments(z, z, t=1.1, T=1.0)
        with pytest.raises(DomainError):
            bridge_moments(z, z, t=0.0, T=0.0)
        with pytest.raises(DimensionError):
            bridge_moments(np.zeros(3), np.zeros(4), t=0.5, T=1.0)
        with pytest.raises(DomainError):
            bridge_moments(np.array([np.nan, 0.0]), np.zeros(2), t=0.5, T=1.0)

    @given(t=st.integers(0, 10))
    def test_variance_symmetry_exact_on_sentence_times(self, t):
        # Sentence times are small integers, so T - t is exactly representable
        # and the symmetry holds bitwise.
        T = 10.0
        z0, zT = np.zeros(2), np.ones(2)
        _, v1 = bridge_moments(z0, zT, float(t), T)
        _, v2 = bridge_moments(z0, zT, T - t, T)
        assert v1 == v2

    @given(t=st.floats(0.0, 10.0))
    def test_variance_symmetry_float_times(self, t):
        T = 10.0
        z0, zT = np.zeros(2), np.ones(2)
        _, v1 = bridge_moments(z0, zT, t, T)
        _, v2 = bridge_moments(z0, zT, T - t, T)
        assert v1 == pytest.approx(v2, rel=1e-12, abs=1e-12)


class TestLogDensity:
    def test_value_at_mean_matches_scalar_oracle(self):
        # d=1, T=4, t=2: variance is exactly 1.0.
        z0, zT = np.array([0.0]), np.array([2.0])
        mean, var = bridge_moments(z0, zT, t=2.0, T=4.0)
        assert var == 1.0
        got = bridge_log_density(mean, z0, zT, t=2.0, T=4.0)
        assert got == pytest.approx(gaussian_logpdf_oracle(mean, mean, 1.0), abs=1e-12)
        assert got == pytest.approx(-0.9189385332046727, abs=1e-10)

    def test_matches_oracle_off_mean(self):
        rng = np.random.default_rng(3)
        z0, zT = rng.normal(size=4), rng.normal(size=4)
        zt = rng.normal(size=4)
        mean, var = bridge_moments(z0, zT, t=1.3, T=5.0)
        got = bridge_log_density(zt, z0, zT, t=1.3, T=5.0)
        assert got == pytest.approx(gaussian_logpdf_oracle(zt, mean, var), rel=1e-12)

    @given(seed=st.integers(0, 500))
    @settings(max_examples=40, deadline=None)
    def test_mode_at_mean(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 8))
        z0, zT = rng.normal(size=d), rng.normal(size=d)
        T = float(rng.uniform(1.0, 10.0))
        t = float(rng.uniform(0.1, T - 0.1))
        mean, _ = bridge_moments(z0, zT, t, T)
        at_mean = bridge_log_density(mean, z0, zT, t, T)
        delta = rng.normal(size=d)
        delta /= np.linalg.norm(delta)
        for scale in (1e-3, 0.1, 2.0):
            assert bridge_log_density(mean + scale * delta, z0, zT, t, T) < at_mean

    def test_endpoint_clamp_is_finite(self):
        z0, zT = np.zeros(3), np.ones(3)
        val = bridge_log_density(z0, z0, zT, t=0.0, T=2.0, var_floor=1e-6)
        assert math.isfinite(val)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            bridge_log_density(np.zeros(2), np.zeros(3), np.zeros(3), t=1.0, T=2.0)


class TestSchedule:
    def test_validation(self):
        with pytest.raises(DomainError):
            BridgeSchedule(T=0.0, times=(0.0,))
        with pytest.raises(DomainError):
            BridgeSchedule(T=1.0, times=(0.0, 0.0))
        with pytest.raises(DomainError):
            BridgeSchedule(T=1.0, times=(0.0, 1.2))
        with pytest.raises(DomainError):
            BridgeSchedule(T=1.0, times=())

    def test_unit_spaced(self):
        s = BridgeSchedule.unit_spaced(5)
        assert s.T == 4.0
        assert s.times == (0.0, 1.0, 2.0, 3.0, 4.0)


class TestSampling:
    def test_endpoints_only(self):
        z0, zT = np.arange(3.0), np.arange(3.0) + 5
        traj = sample_bridge(z0, zT, BridgeSchedule(T=2.0, times=(0.0, 2.0)), rng_seed=0)
        assert np.array_equal(traj.points[0], z0)
        assert np.array_equal(traj.points[1], zT)

    def test_determinism(self):
        z0, zT = np.zeros(4), np.ones(4)
        sched = BridgeSchedule.unit_spaced(7)
        a = sample_bridge(z0, zT, sched, rng_seed=42)
        b = sample_bridge(z0, zT, sched, rng_seed=42)
        assert np.array_equal(a.points, b.points)
        c = sample_bridge(z0, zT, sched, rng_seed=43)
        assert not np.array_equal(a.points, c.points)

    def test_endpoint_pinning_bitwise(self):
        rng = np.random.default_rng(9)
        z0, zT = rng.normal(size=6), rng.normal(size=6)
        sched = BridgeSchedule(T=3.0, times=(0.0, 0.7, 1.5, 2.2, 3.0))
        traj = sample_bridge(z0, zT, sched, rng_seed=5)
        assert traj.points[0].tobytes() == z0.astype(np.float64).tobytes()
        assert traj.points[-1].tobytes() == zT.astype(np.float64).tobytes()

    def test_monte_carlo_moments_match_analytic(self):
        # 10k pinned samples at the midpoint, z0 = zT = 0, T = 1, d = 32:
        # analytic mean 0, variance 0.25 per dimension.
        d, n = 32, 10_000
        z0 = np.zeros(d)
        sched = BridgeSchedule(T=1.0, times=(0.0, 0.5, 1.0))
        mids = np.empty((n, d))
        for i in range(n):
            mids[i] = sample_bridge(z0, z0, sched, rng_seed=i).points[1]
        target_var = 0.25
        se_mean = math.sqrt(target_var / n)
        # Var of the sample variance of a Gaussian: 2 sigma^4 / (n - 1).
        se_var = math.sqrt(2.0 * target_var**2 / (n - 1))
        assert np.all(np.abs(mids.mean(axis=0)) < 3 * se_mean)
        assert np.all(np.abs(mids.var(axis=0) - target_var) < 3 * se_var)

    def test_interior_moments_against_bridge_moments(self):
        # Sequential construction must reproduce the closed-form marginal
        # at an off-center time with distinct endpoints.
        rng = np.random.default_rng(1)
        d, n = 4, 10_000
        z0, zT = rng.normal(size=d), rng.normal(size=d)
        T, t = 5.0, 1.25
        sched = BridgeSchedule(T=T, times=(0.5, t, 3.0))
        mean, var = bridge_moments(z0, zT, t, T)
        pts = np.empty((n, d))
        for i in range(n):
            pts[i] = sample_bridge(z0, zT, sched, rng_seed=10_000 + i).points[1]
        se_mean = math.sqrt(var / n)
        se_var = math.sqrt(2.0 * var**2 / (n - 1))
        assert np.all(np.abs(pts.mean(axis=0) - mean) < 4 * se_mean)
        assert np.all(np.abs(pts.var(axis=0) - var) < 4 * se_var)

    def test_trajectory_shape_checked(self):
        sched = BridgeSchedule(T=1.0, times=(0.0, 1.0))
        with pytest.raises(DimensionError):
            BridgeTrajectory(schedule=sched, points=np.zeros((3, 2)))
