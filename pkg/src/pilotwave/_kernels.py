"""Compiled inner loops: guidance-velocity evaluation and adaptive RKF45 stepping.

Everything here works on plain float/complex scalars and preallocated scratch
arrays so that batch drivers can run trajectories in parallel without any
shared mutable state.  Results are bit-identical regardless of how many
threads execute other trajectories.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

SUCCEEDED = 0
STEP_BUDGET_EXCEEDED = 1
NODE_ENCOUNTERED = 2
STEP_UNDERFLOW = 3

_PI_QUARTER = math.pi ** -0.25
_ROOT2 = math.sqrt(2.0)

# Recurrence / ladder coefficients, index m:
#   phi_{m+1} = REC_X[m] x phi_m - REC_P[m] phi_{m-1}
#   dphi_m    = LAD_DN[m] phi_{m-1} - LAD_UP[m] phi_{m+1}
_REC_X = np.sqrt(2.0 / np.arange(1.0, 67.0))
_REC_P = np.sqrt(np.arange(0.0, 66.0) / np.arange(1.0, 67.0))
_LAD_DN = np.sqrt(np.arange(0.0, 66.0) / 2.0)
_LAD_UP = np.sqrt(np.arange(1.0, 67.0) / 2.0)


@njit(cache=True)
def _fill_modes(x, k, phi, dphi):
    # phi[0..k] and dphi[0..k-1] at the scalar coordinate x
    phi[0] = _PI_QUARTER * math.exp(-0.5 * x * x)
    if k >= 1:
        phi[1] = _ROOT2 * x * phi[0]
    for m in range(1, k):
        phi[m + 1] = _REC_X[m] * x * phi[m] - _REC_P[m] * phi[m - 1]
    dphi[0] = -_LAD_UP[0] * phi[1]
    for m in range(1, k):
        dphi[m] = _LAD_DN[m] * phi[m - 1] - _LAD_UP[m] * phi[m + 1]


@njit(cache=True)
def _velocity_at(eph, q1, q2, t, node_tol, phi1, dphi1, phi2, dphi2):
    """(ok, v1, v2); ok=False flags a node (|psi|^2 < node_tol)."""
    k = eph.shape[0]
    _fill_modes(q1, k, phi1, dphi1)
    _fill_modes(q2, k, phi2, dphi2)
    w = complex(math.cos(t), -math.sin(t))  # e^{-it}
    val = 0j
    g1 = 0j
    g2 = 0j
    pm = w  # e^{-i(m+1)t}
    for m in range(k):
        accp = 0j
        accd = 0j
        pn = complex(1.0, 0.0)  # e^{-int}
        for n in range(k):
            c = eph[m, n] * pn
            accp += c * phi2[n]
            accd += c * dphi2[n]
            pn *= w
        val += pm * phi1[m] * accp
        g1 += pm * dphi1[m] * accp
        g2 += pm * phi1[m] * accd
        pm *= w
    amp2 = val.real * val.real + val.imag * val.imag
    if amp2 < node_tol:
        return False, 0.0, 0.0
    v1 = (g1.imag * val.real - g1.real * val.imag) / amp2
    v2 = (g2.imag * val.real - g2.real * val.imag) / amp2
    return True, v1, v2


@njit(cache=True)
def _advance(eph, q1, q2, t0, t1, h_mag, tol, node_tol, min_step, max_iters,
             phi1, dphi1, phi2, dphi2):
    """Adaptive RKF4(5) from t0 to t1 (either direction).

    The embedded error estimate is scaled per unit step and a step is accepted
    when it is <= tol; rejection halves the step, acceptance grows it by
    min(2, 0.9 (tol/err)^(1/5)).  Returns (status, q1, q2, iters, h_mag) with
    h_mag the step magnitude to seed the next span.
    """
    span = t1 - t0
    if span == 0.0:
        return SUCCEEDED, q1, q2, 0, h_mag
    sgn = 1.0 if span > 0.0 else -1.0
    if h_mag > abs(span):
        h_mag = abs(span)
    t = t0
    iters = 0
    while sgn * (t1 - t) > 0.0:
        if iters >= max_iters:
            return STEP_BUDGET_EXCEEDED, q1, q2, iters, h_mag
        iters += 1
        remaining = abs(t1 - t)
        hit_end = h_mag >= remaining
        h = (t1 - t) if hit_end else sgn * h_mag

        ok, k1x, k1y = _velocity_at(eph, q1, q2, t, node_tol, phi1, dphi1, phi2, dphi2)
        if not ok:
            return NODE_ENCOUNTERED, q1, q2, iters, h_mag
        ok, k2x, k2y = _velocity_at(eph,
                                    q1 + h * 0.25 * k1x,
                                    q2 + h * 0.25 * k1y,
                                    t + 0.25 * h, node_tol, phi1, dphi1, phi2, dphi2)
        if not ok:
            return NODE_ENCOUNTERED, q1, q2, iters, h_mag
        ok, k3x, k3y = _velocity_at(eph,
                                    q1 + h * (0.09375 * k1x + 0.28125 * k2x),
                                    q2 + h * (0.09375 * k1y + 0.28125 * k2y),
                                    t + 0.375 * h, node_tol, phi1, dphi1, phi2, dphi2)
        if not ok:
            return NODE_ENCOUNTERED, q1, q2, iters, h_mag
        ok, k4x, k4y = _velocity_at(eph,
                                    q1 + h * ((1932.0 / 2197.0) * k1x - (7200.0 / 2197.0) * k2x + (7296.0 / 2197.0) * k3x),
                                    q2 + h * ((1932.0 / 2197.0) * k1y - (7200.0 / 2197.0) * k2y + (7296.0 / 2197.0) * k3y),
                                    t + (12.0 / 13.0) * h, node_tol, phi1, dphi1, phi2, dphi2)
        if not ok:
            return NODE_ENCOUNTERED, q1, q2, iters, h_mag
        ok, k5x, k5y = _velocity_at(eph,
                                    q1 + h * ((439.0 / 216.0) * k1x - 8.0 * k2x + (3680.0 / 513.0) * k3x - (845.0 / 4104.0) * k4x),
                                    q2 + h * ((439.0 / 216.0) * k1y - 8.0 * k2y + (3680.0 / 513.0) * k3y - (845.0 / 4104.0) * k4y),
                                    t + h, node_tol, phi1, dphi1, phi2, dphi2)
        if not ok:
            return NODE_ENCOUNTERED, q1, q2, iters, h_mag
        ok, k6x, k6y = _velocity_at(eph,
                                    q1 + h * (-(8.0 / 27.0) * k1x + 2.0 * k2x - (3544.0 / 2565.0) * k3x + (1859.0 / 4104.0) * k4x - 0.275 * k5x),
                                    q2 + h * (-(8.0 / 27.0) * k1y + 2.0 * k2y - (3544.0 / 2565.0) * k3y + (1859.0 / 4104.0) * k4y - 0.275 * k5y),
                                    t + 0.5 * h, node_tol, phi1, dphi1, phi2, dphi2)
        if not ok:
            return NODE_ENCOUNTERED, q1, q2, iters, h_mag

        # embedded 5th-4th order difference, per unit step
        ex = (k1x / 360.0 - (128.0 / 4275.0) * k3x - (2197.0 / 75240.0) * k4x + k5x / 50.0 + (2.0 / 55.0) * k6x)
        ey = (k1y / 360.0 - (128.0 / 4275.0) * k3y - (2197.0 / 75240.0) * k4y + k5y / 50.0 + (2.0 / 55.0) * k6y)
        err = math.sqrt(ex * ex + ey * ey)

        if err <= tol:
            q1 += h * ((25.0 / 216.0) * k1x + (1408.0 / 2565.0) * k3x + (2197.0 / 4104.0) * k4x - 0.2 * k5x)
            q2 += h * ((25.0 / 216.0) * k1y + (1408.0 / 2565.0) * k3y + (2197.0 / 4104.0) * k4y - 0.2 * k5y)
            if hit_end:
                t = t1
            else:
                t = t + h
                fac = 2.0 if err == 0.0 else min(2.0, 0.9 * (tol / err) ** 0.2)
                h_mag *= fac
        else:
            h_mag = 0.5 * abs(h)
            if h_mag < min_step:
                return STEP_UNDERFLOW, q1, q2, iters, h_mag
    return SUCCEEDED, q1, q2, iters, h_mag


@njit(cache=True)
def _integrate_core(eph, x0, y0, t_from, t_to, tol, node_tol, min_step, h0,
                    n_sub, cap_sub, cap_total):
    """Full trajectory over [t_from, t_to] split into n_sub equal sub-spans,
    each with its own iteration cap; returns (status, q1, q2, iters_total)."""
    k = eph.shape[0]
    phi1 = np.empty(k + 1)
    dphi1 = np.empty(k)
    phi2 = np.empty(k + 1)
    dphi2 = np.empty(k)
    q1 = x0
    q2 = y0
    steps = 0
    h = h0
    for s in range(n_sub):
        ta = t_from + (t_to - t_from) * (s / n_sub)
        tb = t_to if s == n_sub - 1 else t_from + (t_to - t_from) * ((s + 1) / n_sub)
        cap = cap_sub
        if cap_total - steps < cap:
            cap = cap_total - steps
        status, q1, q2, it, h = _advance(eph, q1, q2, ta, tb, h, tol, node_tol,
                                         min_step, cap, phi1, dphi1, phi2, dphi2)
        steps += it
        if status != SUCCEEDED:
            return status, q1, q2, steps
    return SUCCEEDED, q1, q2, steps


@njit(cache=True, parallel=True)
def _integrate_batch(eph, starts, t_from, t_to, tol, node_tol, min_step, h0,
                     n_sub, cap_sub, cap_total):
    n = starts.shape[0]
    status = np.empty(n, dtype=np.int64)
    ends = np.empty((n, 2))
    steps = np.empty(n, dtype=np.int64)
    for i in prange(n):
        st, x, y, ns = _integrate_core(eph, starts[i, 0], starts[i, 1], t_from,
                                       t_to, tol, node_tol, min_step, h0,
                                       n_sub, cap_sub, cap_total)
        status[i] = st
        ends[i, 0] = x
        ends[i, 1] = y
        steps[i] = ns
    return status, ends, steps


@njit(cache=True)
def _trace_core(eph, x0, y0, t_start, stride, n_samples, tol, node_tol,
                min_step, h0, cap_seg, cap_total, out):
    """Continuous forward evolution sampled every ``stride``; out is (n_samples, 2).

    Returns (status, n_recorded, iters_total); on failure the recorded prefix
    out[:n_recorded] is still valid.
    """
    k = eph.shape[0]
    phi1 = np.empty(k + 1)
    dphi1 = np.empty(k)
    phi2 = np.empty(k + 1)
    dphi2 = np.empty(k)
    out[0, 0] = x0
    out[0, 1] = y0
    q1 = x0
    q2 = y0
    steps = 0
    h = h0
    for j in range(1, n_samples):
        cap = cap_seg
        if cap_total - steps < cap:
            cap = cap_total - steps
        ta = t_start + (j - 1) * stride
        tb = t_start + j * stride
        status, q1, q2, it, h = _advance(eph, q1, q2, ta, tb, h, tol, node_tol,
                                         min_step, cap, phi1, dphi1, phi2, dphi2)
        steps += it
        if status != SUCCEEDED:
            return status, j, steps
        out[j, 0] = q1
        out[j, 1] = q2
    return SUCCEEDED, n_samples, steps


@njit(cache=True, parallel=True)
def _trace_batch(eph, starts, t_start, stride, n_samples, tol, node_tol,
                 min_step, h0, cap_seg, cap_total):
    n = starts.shape[0]
    outs = np.empty((n, n_samples, 2))
    statuses = np.empty(n, dtype=np.int64)
    counts = np.empty(n, dtype=np.int64)
    steps = np.empty(n, dtype=np.int64)
    for i in prange(n):
        st, cnt, ns = _trace_core(eph, starts[i, 0], starts[i, 1], t_start,
                                  stride, n_samples, tol, node_tol, min_step,
                                  h0, cap_seg, cap_total, outs[i])
        statuses[i] = st
        counts[i] = cnt
        steps[i] = ns
    return statuses, counts, steps, outs
