"""Decay analysis of H-bar(t): exponential-with-residue fits and log series.

The fitted model is a*exp(-b*(t/2pi)) + c, constrained to pass through the
series value at t=0 (so a + c = H-bar(0)), with the residue c clamped
nonnegative.  The fit is solved by a deterministic two-stage search: a coarse
logarithmic scan over the decay rate b with the residue given by a
closed-form conditional least-squares solve, then golden-section refinement.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

#: Absolute floor of the saturation band around the fitted residue.
SATURATION_FLOOR = 0.02


class DegenerateSeries(ValueError):
    """Series cannot be fitted: nonpositive start value or no variation."""


class NonPositiveValueWarning(UserWarning):
    """log_series met a nonpositive mean and truncated the output."""


@dataclass(frozen=True)
class HBarEntry:
    time: float
    periods: float
    values: tuple[float, ...]  # one H-bar value per sampling grid
    mean: float
    vmin: float
    vmax: float
    accuracy_min: float = 1.0

    @property
    def spread(self) -> float:
        return self.vmax - self.vmin


@dataclass
class HBarSeries:
    entries: list[HBarEntry]
    grids: tuple[int, ...] = ()

    def __post_init__(self):
        times = [e.time for e in self.entries]
        if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
            raise ValueError("series times must be strictly increasing")
        for e in self.entries:
            if not (e.vmin <= e.mean <= e.vmax):
                raise ValueError(f"entry at t={e.time:g} violates min <= mean <= max")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.entries])

    @property
    def periods(self) -> np.ndarray:
        return np.array([e.periods for e in self.entries])

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.entries])

    @property
    def spreads(self) -> np.ndarray:
        return np.array([e.spread for e in self.entries])


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float              # decay rate per period
    c: float              # residue
    rms_residual: float
    t_sat: float | None = None


def _sse_given_b(y0: float, periods: np.ndarray, y: np.ndarray, b: float) -> tuple[float, float]:
    """Best residue c (clamped >= 0) and sum of squared residuals at fixed b."""
    decay = np.exp(-b * periods)
    u = 1.0 - decay
    uu = float(u @ u)
    c = float(u @ (y - y0 * decay)) / uu if uu > 0.0 else 0.0
    if c < 0.0:
        c = 0.0
    r = y - (y0 - c) * decay - c
    return c, float(r @ r)


def fit_exponential(series: HBarSeries) -> FitResult:
    """Least-squares fit of the mean values to a*exp(-b*periods) + c with a + c
    pinned to the value at t=0 and c >= 0."""
    if len(series) < 4:
        raise DegenerateSeries(f"need at least 4 entries, got {len(series)}")
    periods = series.periods
    y = series.means
    if periods[0] != 0.0:
        raise DegenerateSeries("series must start at t=0")
    y0 = float(y[0])
    if y0 <= 0.0:
        raise DegenerateSeries(f"H-bar(0) = {y0:g} is not positive")
    if np.ptp(y) == 0.0:
        raise DegenerateSeries("all series values are equal")

    grid = np.geomspace(1e-4, 1e2, 601)
    sse = np.array([_sse_given_b(y0, periods, y, b)[1] for b in grid])
    i = int(np.argmin(sse))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]

    # golden-section refinement to relative bracket width 1e-9
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1 = _sse_given_b(y0, periods, y, x1)[1]
    f2 = _sse_given_b(y0, periods, y, x2)[1]
    while (hi - lo) > 1e-9 * hi:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = _sse_given_b(y0, periods, y, x1)[1]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = _sse_given_b(y0, periods, y, x2)[1]
    b = 0.5 * (lo + hi)
    c, sse_min = _sse_given_b(y0, periods, y, b)
    return FitResult(a=y0 - c, b=float(b), c=c,
                     rms_residual=math.sqrt(sse_min / len(y)))


def saturation_time(series: HBarSeries, fit: FitResult) -> float | None:
    """Earliest series time from which every mean stays within
    max(2*grid spread, SATURATION_FLOOR) of the fitted residue; None if the
    series never settles."""
    c = fit.c
    ok = np.array([abs(e.mean - c) <= max(2.0 * e.spread, SATURATION_FLOOR)
                   for e in series.entries])
    if not ok[-1]:
        return None
    idx = len(ok) - 1
    while idx > 0 and ok[idx - 1]:
        idx -= 1
    return float(series.entries[idx].time)


def log_series(series: HBarSeries) -> list[tuple[float, float, float, float]]:
    """(time, ln mean, ln min, ln max) rows for decay-rate inspection.

    Truncates at the first nonpositive mean with a
    :class:`NonPositiveValueWarning`; nonpositive error-bar endpoints within
    the kept prefix come out as NaN.
    """
    out = []
    for e in series.entries:
        if e.mean <= 0.0:
            warnings.warn(
                f"H-bar mean {e.mean:g} at t={e.time:g} is not positive; "
                f"log series truncated to {len(out)} entries",
                NonPositiveValueWarning, stacklevel=2)
            break
        lmin = math.log(e.vmin) if e.vmin > 0.0 else math.nan
        lmax = math.log(e.vmax) if e.vmax > 0.0 else math.nan
        out.append((e.time, math.log(e.mean), lmin, lmax))
    return out


def with_saturation(series: HBarSeries, fit: FitResult) -> FitResult:
    """Convenience: the fit with its saturation time filled in."""
    return replace(fit, t_sat=saturation_time(series, fit))


# -- CSV round-trip -----------------------------------------------------------

def series_to_csv(path, series: HBarSeries) -> None:
    """Columns: time, periods, one hbar_grid<P> per grid, mean/min/max, accuracy_min."""
    grids = series.grids or tuple(range(len(series.entries[0].values)))
    cols = (["time", "periods"] + [f"hbar_grid{g}" for g in grids]
            + ["hbar_mean", "hbar_min", "hbar_max", "accuracy_min"])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for e in series.entries:
            writer.writerow([repr(e.time), repr(e.periods)]
                            + [repr(v) for v in e.values]
                            + [repr(e.mean), repr(e.vmin), repr(e.vmax), repr(e.accuracy_min)])


def series_from_csv(path) -> HBarSeries:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        grid_cols = [(i, name) for i, name in enumerate(header) if name.startswith("hbar_grid")]
        idx = {name: i for i, name in enumerate(header)}
        for required in ("time", "periods", "hbar_mean", "hbar_min", "hbar_max"):
            if required not in idx:
                raise ValueError(f"{path}: missing column {required}")
        grids = tuple(int(name.removeprefix("hbar_grid")) for _, name in grid_cols)
        entries = []
        for row in reader:
            if not row:
                continue
            entries.append(HBarEntry(
                time=float(row[idx["time"]]),
                periods=float(row[idx["periods"]]),
                values=tuple(float(row[i]) for i, _ in grid_cols),
                mean=float(row[idx["hbar_mean"]]),
                vmin=float(row[idx["hbar_min"]]),
                vmax=float(row[idx["hbar_max"]]),
                accuracy_min=float(row[idx["accuracy_min"]]) if "accuracy_min" in idx else 1.0,
            ))
    return HBarSeries(entries, grids=grids)
