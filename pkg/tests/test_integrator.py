from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from pilotwave import (IntegratorConfig, Status, TrajectoryFailure, backtrack,
                       integrate, integrate_batch, validate_precision)

TAU = 2.0 * math.pi


class TestConfig:
    def test_defaults_consistent(self):
        cfg = IntegratorConfig()
        assert cfg.sub_intervals * cfg.max_steps_per_sub_interval == cfg.max_steps_total
        assert cfg.min_step < cfg.initial_step

    @pytest.mark.parametrize("kwargs", [
        {"position_tolerance": 0.0},
        {"local_error_tolerance": -1e-8},
        {"min_step": 1e-2, "initial_step": 1e-3},
        {"sub_intervals": 0},
        {"node_threshold": 0.0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            IntegratorConfig(**kwargs)


class TestGroundState:
    def test_stationary_over_five_periods(self, ground_spec, default_cfg):
        out = integrate(ground_spec, (1.2, -0.4), 0.0, 10 * math.pi, default_cfg)
        assert out.succeeded
        assert out.endpoint == pytest.approx([1.2, -0.4], abs=1e-12)

    def test_backtrack_far_time(self, ground_spec, default_cfg):
        out = backtrack(ground_spec, (0.3, 0.8), 100 * math.pi, default_cfg)
        assert out.succeeded
        assert out.endpoint == pytest.approx([0.3, 0.8], abs=1e-12)

    def test_validate_precision_zero(self, ground_spec, default_cfg):
        assert validate_precision(ground_spec, (1.0, 1.0), TAU, default_cfg) <= 1e-12


class TestIntegrate:
    def test_zero_span_is_identity(self, m4_spec, default_cfg):
        out = backtrack(m4_spec, (0.7, -1.1), 0.0, default_cfg)
        assert out.succeeded
        assert out.steps_used == 0
        assert out.endpoint == pytest.approx([0.7, -1.1], abs=0.0)

    def test_negative_backtrack_time_rejected(self, m4_spec, default_cfg):
        with pytest.raises(ValueError):
            backtrack(m4_spec, (0.0, 0.0), -1.0, default_cfg)

    def test_backtrack_matches_fixed_step_reference(self, m4_spec, default_cfg):
        out = backtrack(m4_spec, (0.3125, 0.3125), TAU, default_cfg)
        assert out.succeeded
        ref = oracles.rk4_integrate(m4_spec._ephases, 0.3125, 0.3125, TAU, 0.0, 1e-5)
        assert math.hypot(out.endpoint[0] - ref[0], out.endpoint[1] - ref[1]) <= 0.025

    def test_long_confined_trajectory_succeeds(self, m4_spec, default_cfg):
        out = integrate(m4_spec, (1.5, 1.5), 0.0, 50 * math.pi, default_cfg)
        assert out.succeeded
        assert out.steps_used < default_cfg.max_steps_total

    def test_round_trip_thousand_points(self, m4_spec, default_cfg):
        rng = np.random.default_rng(123)
        starts = rng.uniform(-3.0, 3.0, size=(1000, 2))
        st_f, mid, _ = integrate_batch(m4_spec, starts, 0.0, TAU, default_cfg)
        st_b, back, _ = integrate_batch(m4_spec, mid, TAU, 0.0, default_cfg)
        ok = (st_f == int(Status.SUCCEEDED)) & (st_b == int(Status.SUCCEEDED))
        disp = np.full(len(starts), np.inf)
        disp[ok] = np.hypot(back[ok, 0] - starts[ok, 0], back[ok, 1] - starts[ok, 1])
        frac = float((disp <= 2 * default_cfg.position_tolerance).mean())
        assert frac >= 0.99


class TestFailureModes:
    def test_step_budget_exceeded(self, m4_spec):
        cfg = IntegratorConfig(sub_intervals=2, max_steps_per_sub_interval=5,
                               max_steps_total=10)
        out = integrate(m4_spec, (0.5, 0.5), 0.0, TAU, cfg)
        assert out.status is Status.STEP_BUDGET_EXCEEDED
        assert out.endpoint is None
        assert out.steps_used <= 10

    def test_total_cap_binds_before_sub_interval_cap(self, m4_spec):
        cfg = IntegratorConfig(sub_intervals=2, max_steps_per_sub_interval=1000,
                               max_steps_total=7)
        out = integrate(m4_spec, (0.5, 0.5), 0.0, TAU, cfg)
        assert out.status is Status.STEP_BUDGET_EXCEEDED
        assert out.steps_used <= 7

    def test_node_encountered(self, m4_spec):
        # an absurdly high node threshold flags the very first evaluation
        cfg = IntegratorConfig(node_threshold=1e3)
        out = integrate(m4_spec, (0.5, 0.5), 0.0, 1.0, cfg)
        assert out.status is Status.NODE_ENCOUNTERED
        assert out.endpoint is None

    def test_step_underflow(self, m4_spec):
        # unreachable tolerance forces halving below the minimum step
        cfg = IntegratorConfig(local_error_tolerance=1e-300, min_step=1e-6,
                               initial_step=1e-3)
        out = integrate(m4_spec, (0.5, 0.5), 0.0, 1.0, cfg)
        assert out.status is Status.STEP_UNDERFLOW

    def test_validate_precision_propagates_failures(self, m4_spec):
        cfg = IntegratorConfig(sub_intervals=2, max_steps_per_sub_interval=3,
                               max_steps_total=6)
        with pytest.raises(TrajectoryFailure) as err:
            validate_precision(m4_spec, (0.5, 0.5), TAU, cfg)
        assert err.value.outcome.status is Status.STEP_BUDGET_EXCEEDED


class TestDeterminism:
    def test_batch_is_reproducible(self, m4_spec, default_cfg):
        starts = np.random.default_rng(5).uniform(-2, 2, size=(64, 2))
        st1, e1, n1 = integrate_batch(m4_spec, starts, 0.0, TAU, default_cfg)
        st2, e2, n2 = integrate_batch(m4_spec, starts, 0.0, TAU, default_cfg)
        assert np.array_equal(st1, st2)
        assert np.array_equal(e1, e2)
        assert np.array_equal(n1, n2)

    def test_batch_matches_scalar_path(self, m4_spec, default_cfg):
        starts = np.random.default_rng(8).uniform(-2, 2, size=(16, 2))
        st, ends, steps = integrate_batch(m4_spec, starts, 0.0, TAU, default_cfg)
        for i, p in enumerate(starts):
            out = integrate(m4_spec, p, 0.0, TAU, default_cfg)
            assert int(st[i]) == int(out.status)
            assert out.steps_used == steps[i]
            np.testing.assert_array_equal(out.endpoint, ends[i])

    def test_independent_of_thread_count(self, m4_spec, default_cfg):
        import numba
        starts = np.random.default_rng(9).uniform(-2, 2, size=(32, 2))
        before = numba.get_num_threads()
        try:
            numba.set_num_threads(1)
            _, e1, n1 = integrate_batch(m4_spec, starts, 0.0, TAU, default_cfg)
            numba.set_num_threads(before)
            _, e2, n2 = integrate_batch(m4_spec, starts, 0.0, TAU, default_cfg)
        finally:
            numba.set_num_threads(before)
        assert np.array_equal(e1, e2)
        assert np.array_equal(n1, n2)


class TestPrecision:
    def test_validate_precision_sample(self, m4_spec, default_cfg):
        rng = np.random.default_rng(21)
        worst = 0.0
        for _ in range(100):
            p = rng.uniform(-3.0, 3.0, size=2)
            worst = max(worst, validate_precision(m4_spec, p, TAU, default_cfg))
        assert worst <= 2 * default_cfg.position_tolerance

    def test_tighter_tolerance_does_not_worsen_median(self, m4_spec):
        rng = np.random.default_rng(22)
        starts = rng.uniform(-3.0, 3.0, size=(50, 2))
        medians = []
        for tol in (1e-8, 1e-9):
            cfg = IntegratorConfig(local_error_tolerance=tol)
            disps = [validate_precision(m4_spec, p, TAU, cfg) for p in starts]
            medians.append(float(np.median(disps)))
        assert medians[1] <= medians[0]

    def test_monotone_convergence_to_tight_reference(self, m4_spec):
        rng = np.random.default_rng(23)
        starts = rng.uniform(-2.5, 2.5, size=(100, 2))
        ref_cfg = IntegratorConfig(local_error_tolerance=1e-12)
        _, ref, _ = integrate_batch(m4_spec, starts, 0.0, TAU, ref_cfg)
        medians = []
        for tol in (1e-4, 5e-5, 2.5e-5):
            cfg = IntegratorConfig(local_error_tolerance=tol)
            _, ends, _ = integrate_batch(m4_spec, starts, 0.0, TAU, cfg)
            err = np.hypot(ends[:, 0] - ref[:, 0], ends[:, 1] - ref[:, 1])
            medians.append(float(np.median(err)))
        assert medians[0] >= medians[1] >= medians[2]
