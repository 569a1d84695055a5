"""Quantum relaxation in pilot-wave dynamics of the 2-D harmonic oscillator.

Builds nonequilibrium densities by backtracking de Broglie trajectories,
tracks the coarse-grained H-function over long times, fits its
exponential-with-residue decay, and grades trajectory confinement.
"""

__version__ = "0.1.0"

from .analysis import (FitResult, HBarEntry, HBarSeries, fit_exponential,
                       log_series, saturation_time)
from .confinement import (DEFAULT_START_POINTS, SquareFate, TrajectoryTrace,
                          coverage, square_fate, trace)
from .density import (AbortedRun, CellPartition, CellStarved, CoarseField,
                      DensityField, InfiniteHBar, SmoothedField, STANDARD_GRIDS,
                      build_density, coarse_grain, forward_crosscheck, hbar,
                      hbar_series, smooth_density)
from .integrator import (IntegratorConfig, Status, TrajectoryFailure,
                         TrajectoryOutcome, backtrack, integrate,
                         integrate_batch, validate_precision)
from .wavefunction import (M4_RELAXING_PHASES, M4_RESIDUE_PHASES, MAX_MODE,
                           NodeError, PERIOD, SuperpositionSpec, eigenfunction,
                           eigenfunction_derivative, load_phases, psi,
                           psi_gradient, random_phases, rho_initial, rho_qt,
                           save_phases, velocity)

__all__ = [
    "AbortedRun", "CellPartition", "CellStarved", "CoarseField", "DensityField",
    "DEFAULT_START_POINTS", "FitResult", "HBarEntry", "HBarSeries",
    "InfiniteHBar", "IntegratorConfig", "M4_RELAXING_PHASES",
    "M4_RESIDUE_PHASES", "MAX_MODE", "NodeError", "PERIOD", "SmoothedField",
    "SquareFate", "STANDARD_GRIDS", "Status", "SuperpositionSpec",
    "TrajectoryFailure", "TrajectoryOutcome", "TrajectoryTrace", "backtrack",
    "build_density", "coarse_grain", "coverage", "eigenfunction",
    "eigenfunction_derivative", "fit_exponential", "forward_crosscheck", "hbar",
    "hbar_series", "integrate", "integrate_batch", "load_phases", "log_series",
    "psi", "psi_gradient", "random_phases", "rho_initial", "rho_qt",
    "saturation_time", "save_phases", "smooth_density", "square_fate", "trace",
    "validate_precision", "velocity",
]
