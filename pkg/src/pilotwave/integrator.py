"""Adaptive trajectory integration with hard step budgets.

Trajectories follow dq/dt = velocity(q, t) under an embedded RKF4(5) pair.
The time span is split into equal sub-intervals, each with its own iteration
cap, and a trajectory that exhausts a cap, falls below the minimum step, or
runs into a wave-function node is reported as failed ("discarded") rather
than silently truncated.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import _kernels
from .wavefunction import NODE_THRESHOLD, SuperpositionSpec


class Status(IntEnum):
    SUCCEEDED = _kernels.SUCCEEDED
    STEP_BUDGET_EXCEEDED = _kernels.STEP_BUDGET_EXCEEDED
    NODE_ENCOUNTERED = _kernels.NODE_ENCOUNTERED
    STEP_UNDERFLOW = _kernels.STEP_UNDERFLOW


class TrajectoryFailure(RuntimeError):
    """Raised by helpers that cannot express failure in their return value."""

    def __init__(self, outcome: "TrajectoryOutcome"):
        super().__init__(f"trajectory failed: {outcome.status.name}")
        self.outcome = outcome


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step budgets for trajectory integration.

    ``position_tolerance`` is the end-to-end precision target certified by
    round-trip validation; ``local_error_tolerance`` is the per-unit-time
    embedded error bound actually enforced on every step.
    """

    position_tolerance: float = 0.025
    local_error_tolerance: float = 1e-8
    max_steps_total: int = 10_000_000
    sub_intervals: int = 10
    max_steps_per_sub_interval: int = 1_000_000
    min_step: float = 1e-12
    initial_step: float = 1e-3
    node_threshold: float = NODE_THRESHOLD

    def __post_init__(self):
        if self.position_tolerance <= 0 or self.local_error_tolerance <= 0:
            raise ValueError("tolerances must be strictly positive")
        if self.min_step <= 0 or self.initial_step <= 0:
            raise ValueError("steps must be strictly positive")
        if self.min_step >= self.initial_step:
            raise ValueError("min_step must be smaller than initial_step")
        if self.sub_intervals < 1 or self.max_steps_per_sub_interval < 1 or self.max_steps_total < 1:
            raise ValueError("step budgets must be at least 1")
        if self.node_threshold <= 0:
            raise ValueError("node_threshold must be strictly positive")


@dataclass(frozen=True)
class TrajectoryOutcome:
    status: Status
    endpoint: np.ndarray | None  # valid only when succeeded
    steps_used: int

    @property
    def succeeded(self) -> bool:
        return self.status is Status.SUCCEEDED


def _as_point(p) -> tuple[float, float]:
    q1, q2 = float(p[0]), float(p[1])
    if not (np.isfinite(q1) and np.isfinite(q2)):
        raise ValueError(f"point has non-finite components: {p!r}")
    return q1, q2


def integrate(spec: SuperpositionSpec, start, t_from: float, t_to: float,
              cfg: IntegratorConfig | None = None) -> TrajectoryOutcome:
    """Integrate one trajectory from ``start`` at t_from to t_to (either order)."""
    cfg = cfg or IntegratorConfig()
    q1, q2 = _as_point(start)
    st, x, y, steps = _kernels._integrate_core(
        spec._ephases, q1, q2, float(t_from), float(t_to),
        cfg.local_error_tolerance, cfg.node_threshold, cfg.min_step,
        cfg.initial_step, cfg.sub_intervals, cfg.max_steps_per_sub_interval,
        cfg.max_steps_total)
    status = Status(st)
    endpoint = np.array([x, y]) if status is Status.SUCCEEDED else None
    return TrajectoryOutcome(status, endpoint, int(steps))


def integrate_batch(spec: SuperpositionSpec, starts: np.ndarray, t_from: float,
                    t_to: float, cfg: IntegratorConfig | None = None):
    """Integrate many independent trajectories in parallel.

    ``starts`` is (n, 2); returns (statuses, endpoints, steps_used) arrays.
    Endpoints of failed trajectories hold their last accepted position and
    must be ignored.  Results are deterministic and independent of the
    thread schedule.
    """
    cfg = cfg or IntegratorConfig()
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    if starts.ndim != 2 or starts.shape[1] != 2:
        raise ValueError(f"starts must be (n, 2), got {starts.shape}")
    statuses, ends, steps = _kernels._integrate_batch(
        spec._ephases, starts, float(t_from), float(t_to),
        cfg.local_error_tolerance, cfg.node_threshold, cfg.min_step,
        cfg.initial_step, cfg.sub_intervals, cfg.max_steps_per_sub_interval,
        cfg.max_steps_total)
    return statuses, ends, steps


def backtrack(spec: SuperpositionSpec, p_at_t, t: float,
              cfg: IntegratorConfig | None = None) -> TrajectoryOutcome:
    """Trajectory through ``p_at_t`` at time t, integrated back to t=0."""
    if t < 0:
        raise ValueError(f"backtrack requires t >= 0, got {t}")
    return integrate(spec, p_at_t, t, 0.0, cfg)


def validate_precision(spec: SuperpositionSpec, p, t: float,
                       cfg: IntegratorConfig | None = None) -> float:
    """Round-trip displacement |forward(backtrack(p, t), t) - p|.

    Certifies the end-to-end position tolerance on sampled trajectories;
    raises :class:`TrajectoryFailure` if either leg fails.
    """
    if t <= 0:
        raise ValueError(f"validate_precision requires t > 0, got {t}")
    cfg = cfg or IntegratorConfig()
    back = backtrack(spec, p, t, cfg)
    if not back.succeeded:
        raise TrajectoryFailure(back)
    fwd = integrate(spec, back.endpoint, 0.0, t, cfg)
    if not fwd.succeeded:
        raise TrajectoryFailure(fwd)
    q1, q2 = _as_point(p)
    return float(np.hypot(fwd.endpoint[0] - q1, fwd.endpoint[1] - q2))
