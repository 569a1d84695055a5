"""Analytic wave function of the two-dimensional harmonic oscillator.

Everything here is exact (no grids, no integration): the orthonormal
eigenfunctions, an equal-weight superposition of the lowest modes_per_axis^2
product modes with prescribed phases, its probability density, and the
guidance velocity v_r = Im(d_r psi / psi).  Units are hbar = m = omega = 1,
so the superposition repeats exactly with period 2*pi.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: Highest eigenfunction index the normalised recurrence is validated for.
MAX_MODE = 64

#: |psi|^2 below this value counts as a wave-function node.
NODE_THRESHOLD = 1e-30

#: Exact recurrence time of any equal-weight superposition built here.
PERIOD = 2.0 * math.pi

_PI_QUARTER = math.pi ** -0.25


class NodeError(ArithmeticError):
    """Velocity requested at (or numerically on top of) a node of psi."""


def _check_mode(m: int) -> None:
    if m < 0:
        raise ValueError(f"mode index must be nonnegative, got {m}")
    if m > MAX_MODE:
        raise ValueError(f"mode index {m} above supported maximum {MAX_MODE}")


def _phi_table(kmax: int, x: np.ndarray) -> np.ndarray:
    """Eigenfunctions phi_0..phi_kmax at x, stacked along axis 0.

    Uses the normalised three-term recurrence

        phi_{k+1}(x) = sqrt(2/(k+1)) x phi_k(x) - sqrt(k/(k+1)) phi_{k-1}(x)

    with phi_0 = pi^(-1/4) exp(-x^2/2), which stays O(1) where raw Hermite
    polynomials would overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((kmax + 1,) + x.shape, dtype=np.float64)
    out[0] = _PI_QUARTER * np.exp(-0.5 * x * x)
    if kmax >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for k in range(1, kmax):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * x * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def eigenfunction(m: int, x):
    """Orthonormal oscillator eigenfunction phi_m(x) = pi^(-1/4) (2^m m!)^(-1/2) H_m(x) e^(-x^2/2)."""
    _check_mode(m)
    val = _phi_table(m, x)[m]
    return val if np.ndim(x) else float(val)


def eigenfunction_derivative(m: int, x):
    """d(phi_m)/dx via the ladder identity sqrt(m/2) phi_{m-1} - sqrt((m+1)/2) phi_{m+1}."""
    _check_mode(m)
    tab = _phi_table(m + 1, x)
    val = -math.sqrt((m + 1) / 2.0) * tab[m + 1]
    if m > 0:
        val = val + math.sqrt(m / 2.0) * tab[m - 1]
    return val if np.ndim(x) else float(val)


@dataclass(frozen=True, eq=False)
class SuperpositionSpec:
    """Equal-weight superposition of the lowest modes_per_axis^2 product modes.

    psi(q1,q2,t) = M^(-1/2) sum_{m,n} exp(i theta_mn) exp(-i(m+n+1)t) phi_m(q1) phi_n(q2)

    with M = modes_per_axis^2 and theta = ``phases`` (radians, row index m,
    column index n).  Instances are immutable and safe to share across
    worker threads.
    """

    modes_per_axis: int
    phases: np.ndarray

    def __post_init__(self):
        k = self.modes_per_axis
        if k < 1:
            raise ValueError(f"modes_per_axis must be >= 1, got {k}")
        if k - 1 > MAX_MODE:
            raise ValueError(f"modes_per_axis {k} needs eigenfunctions above MAX_MODE={MAX_MODE}")
        phases = np.ascontiguousarray(self.phases, dtype=np.float64)
        if phases.shape != (k, k):
            raise ValueError(f"phase matrix must be {k}x{k}, got {phases.shape}")
        if not np.all(np.isfinite(phases)):
            raise ValueError("phase matrix contains non-finite entries")
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)
        # 1/sqrt(M) e^{i theta}, the time-independent part of the mode coefficients
        eph = np.ascontiguousarray(np.exp(1j * phases) / k)
        eph.setflags(write=False)
        object.__setattr__(self, "_ephases", eph)

    @property
    def mode_count(self) -> int:
        """Total number of superposed modes M."""
        return self.modes_per_axis ** 2

    def coefficients(self, t: float) -> np.ndarray:
        """Mode coefficient matrix c_mn(t) = M^(-1/2) e^{i theta_mn} e^{-i(m+n+1)t}."""
        k = self.modes_per_axis
        ph = np.exp(-1j * (np.arange(k) + 0.5) * t)  # split the +1 evenly over both axes
        return self._ephases * ph[:, None] * ph[None, :]


def psi(spec: SuperpositionSpec, q1, q2, t: float):
    """Wave function amplitude at (q1, q2, t); broadcasts over coordinate arrays."""
    k = spec.modes_per_axis
    p1 = _phi_table(k - 1, q1)
    p2 = _phi_table(k - 1, q2)
    c = spec.coefficients(t)
    val = np.einsum("mn,m...,n...->...", c, p1, p2)
    return val if (np.ndim(q1) or np.ndim(q2)) else complex(val)


def psi_gradient(spec: SuperpositionSpec, q1, q2, t: float):
    """(psi, d(psi)/dq1, d(psi)/dq2), all analytic; broadcasts like :func:`psi`."""
    k = spec.modes_per_axis
    p1 = _phi_table(k, q1)
    p2 = _phi_table(k, q2)
    idx = np.arange(k)
    up = np.sqrt((idx + 1) / 2.0)
    down = np.sqrt(idx / 2.0)
    # ladder: dphi_m = sqrt(m/2) phi_{m-1} - sqrt((m+1)/2) phi_{m+1}
    dp1 = -up.reshape((k,) + (1,) * (p1.ndim - 1)) * p1[1:k + 1]
    dp1[1:] += down[1:].reshape((k - 1,) + (1,) * (p1.ndim - 1)) * p1[:k - 1]
    dp2 = -up.reshape((k,) + (1,) * (p2.ndim - 1)) * p2[1:k + 1]
    dp2[1:] += down[1:].reshape((k - 1,) + (1,) * (p2.ndim - 1)) * p2[:k - 1]
    c = spec.coefficients(t)
    val = np.einsum("mn,m...,n...->...", c, p1[:k], p2[:k])
    g1 = np.einsum("mn,m...,n...->...", c, dp1, p2[:k])
    g2 = np.einsum("mn,m...,n...->...", c, p1[:k], dp2)
    if np.ndim(q1) or np.ndim(q2):
        return val, g1, g2
    return complex(val), complex(g1), complex(g2)


def velocity(spec: SuperpositionSpec, q1, q2, t: float, node_threshold: float = NODE_THRESHOLD):
    """Guidance velocity (Im(d1 psi/psi), Im(d2 psi/psi)).

    Raises :class:`NodeError` if |psi|^2 falls below ``node_threshold`` at any
    requested point; trajectory integration treats that as a failed trajectory.
    """
    val, g1, g2 = psi_gradient(spec, q1, q2, t)
    amp2 = np.abs(val) ** 2
    if np.any(amp2 < node_threshold):
        raise NodeError(f"|psi|^2 < {node_threshold:g} encountered at t={t}")
    v1 = (np.imag(g1) * np.real(val) - np.real(g1) * np.imag(val)) / amp2
    v2 = (np.imag(g2) * np.real(val) - np.real(g2) * np.imag(val)) / amp2
    if np.ndim(q1) or np.ndim(q2):
        return v1, v2
    return float(v1), float(v2)


def rho_qt(spec: SuperpositionSpec, q1, q2, t: float):
    """Equilibrium (Born-rule) density |psi|^2."""
    val = psi(spec, q1, q2, t)
    out = np.abs(val) ** 2
    return out if (np.ndim(q1) or np.ndim(q2)) else float(out)


def rho_initial(q1, q2):
    """Ground-state density phi_0(q1)^2 phi_0(q2)^2 = exp(-q1^2-q2^2)/pi, the standard nonequilibrium start."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    out = np.exp(-(q1 * q1) - (q2 * q2)) / math.pi
    return out if out.ndim else float(out)


def random_phases(modes_per_axis: int, seed: int) -> np.ndarray:
    """Uniform phases on [0, 2*pi) from a seeded 64-bit PRNG (reproducible per seed)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 2.0 * math.pi, size=(modes_per_axis, modes_per_axis))


# Reference four-mode phase sets (radians, row index m, column index n).
# The first drives strongly confined trajectories and a persistent H-bar
# residue; the second relaxes to equilibrium with no discernible residue.
M4_RESIDUE_PHASES = np.array([[0.5442, 2.3099],
                              [5.6703, 4.5333]])
M4_RELAXING_PHASES = np.array([[0.0, 2.0865],
                               [6.2782, 0.2582]])
M4_RESIDUE_PHASES.setflags(write=False)
M4_RELAXING_PHASES.setflags(write=False)


def save_phases(path, spec: SuperpositionSpec, seed: int | None = None) -> None:
    """Write a phase-set document: {"modes_per_axis", "phases", "seed"}; deterministic bytes."""
    doc = {
        "modes_per_axis": spec.modes_per_axis,
        "phases": [[float(v) for v in row] for row in spec.phases],
    }
    if seed is not None:
        doc["seed"] = int(seed)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_phases(path) -> tuple[SuperpositionSpec, int | None]:
    """Read a phase-set document written by :func:`save_phases`; returns (spec, seed)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable phase file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "modes_per_axis" not in doc or "phases" not in doc:
        raise ValueError(f"phase file {path} lacks modes_per_axis/phases fields")
    spec = SuperpositionSpec(int(doc["modes_per_axis"]), np.asarray(doc["phases"], dtype=np.float64))
    seed = doc.get("seed")
    return spec, (int(seed) if seed is not None else None)
