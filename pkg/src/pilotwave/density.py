"""Nonequilibrium density reconstruction and the coarse-grained H-function.

The density at time t is built by the backtracking method: every point of a
uniform sampling grid is integrated back to t=0, where the ratio
f = rho/rho_qt is known analytically, and rho(g, t) = f * rho_qt(g, t) since
f is conserved along trajectories.  Cell averages of rho and rho_qt over a
fixed partition then give H-bar = sum rho_bar ln(rho_bar/rho_bar_qt) * cell
area.  Repeating the construction on three slightly different sampling grids
brackets the sampling error.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import HBarEntry, HBarSeries
from .integrator import IntegratorConfig, Status, integrate_batch
from .wavefunction import SuperpositionSpec, rho_initial, rho_qt

#: Points-per-cell-axis of the three standard sampling grids.
STANDARD_GRIDS = (29, 30, 31)

#: Minimum fraction of successfully backtracked grid points for a usable run.
MIN_ACCURACY = 0.95


class AbortedRun(RuntimeError):
    """Too many discarded trajectories; carries the partial field/series for diagnosis."""

    def __init__(self, message: str, field: "DensityField | None" = None,
                 series: "HBarSeries | None" = None):
        super().__init__(message)
        self.field = field
        self.series = series


class CellStarved(RuntimeError):
    """A coarse-graining cell ended up with zero valid sample points."""


class InfiniteHBar(ArithmeticError):
    """Some cell has rho_bar > 0 where rho_bar_qt = 0: H-bar diverges."""


@dataclass(frozen=True)
class CellPartition:
    """Coarse-graining geometry: a square box split into square cells, each
    sampled by an interior (cell-centred) lattice of points."""

    box_side: float = 10.0
    cells_per_axis: int = 16
    points_per_cell_axis: int = 30

    def __post_init__(self):
        if self.box_side <= 0:
            raise ValueError("box_side must be positive")
        if self.cells_per_axis < 1 or self.points_per_cell_axis < 1:
            raise ValueError("cell and point counts must be at least 1")

    @property
    def cell_side(self) -> float:
        return self.box_side / self.cells_per_axis

    @property
    def points_per_axis(self) -> int:
        return self.cells_per_axis * self.points_per_cell_axis

    def axis_points(self) -> np.ndarray:
        """Sample coordinates along one axis: uniform, cell-aligned, strictly
        interior to the cells (offset half a spacing from every cell edge)."""
        n = self.points_per_axis
        step = self.box_side / n
        return -0.5 * self.box_side + (np.arange(n) + 0.5) * step

    def cell_index(self, x) -> np.ndarray:
        """Cell index along one axis for coordinate(s) x; -1 outside the box."""
        x = np.asarray(x, dtype=np.float64)
        idx = np.floor((x + 0.5 * self.box_side) / self.cell_side).astype(np.int64)
        idx[(x < -0.5 * self.box_side) | (x >= 0.5 * self.box_side)] = -1
        return idx


@dataclass
class DensityField:
    """Point-sampled rho and rho_qt at one time, with per-point validity."""

    time: float
    partition: CellPartition
    rho: np.ndarray       # (n, n), axis 0 = q1 index, axis 1 = q2 index
    rho_qt: np.ndarray    # (n, n)
    valid: np.ndarray     # (n, n) bool
    accuracy_fraction: float


@dataclass
class CoarseField:
    """Cell means of rho and rho_qt over the non-overlapping partition cells."""

    time: float
    partition: CellPartition
    rho_bar: np.ndarray      # (cells, cells)
    rho_qt_bar: np.ndarray   # (cells, cells)
    valid_counts: np.ndarray  # (cells, cells) int


@dataclass
class SmoothedField:
    """Overlapping-cell means on a fine lattice of cell centres, for display."""

    time: float
    centres: np.ndarray   # (n,) lattice coordinates, identical on both axes
    cell_side: float
    rho: np.ndarray       # (n, n)
    rho_qt: np.ndarray    # (n, n)


def build_density(spec: SuperpositionSpec, t: float, partition: CellPartition,
                  cfg: IntegratorConfig | None = None, initial_density=None,
                  min_accuracy: float = MIN_ACCURACY) -> DensityField:
    """Backtrack every grid point to t=0 and transport the conserved ratio.

    ``initial_density`` defaults to the ground-state density; pass
    ``lambda q1, q2: rho_qt(spec, q1, q2, 0.0)`` for an equilibrium start.
    Raises :class:`AbortedRun` (with the partial field attached) when the
    fraction of successfully backtracked points falls below ``min_accuracy``.
    """
    if t < 0:
        raise ValueError(f"build_density requires t >= 0, got {t}")
    cfg = cfg or IntegratorConfig()
    rho0 = initial_density if initial_density is not None else rho_initial

    xs = partition.axis_points()
    q1g, q2g = np.meshgrid(xs, xs, indexing="ij")
    starts = np.column_stack([q1g.ravel(), q2g.ravel()])
    statuses, ends, _ = integrate_batch(spec, starts, t, 0.0, cfg)

    ok = statuses == int(Status.SUCCEEDED)
    ratio = np.zeros(starts.shape[0])
    if ok.any():
        ok_idx = np.flatnonzero(ok)
        e1 = ends[ok_idx, 0]
        e2 = ends[ok_idx, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.asarray(rho0(e1, e2), dtype=np.float64) / rho_qt(spec, e1, e2, 0.0)
        good = np.isfinite(f)  # a backtrack can land on a node of rho_qt(., 0)
        ratio[ok_idx[good]] = f[good]
        ok[ok_idx[~good]] = False

    rq_now = rho_qt(spec, q1g, q2g, t)
    rho = (ratio * rq_now.ravel()).reshape(rq_now.shape)
    valid = ok.reshape(rq_now.shape)
    rho[~valid] = 0.0
    accuracy = float(valid.mean())

    field = DensityField(float(t), partition, rho, rq_now, valid, accuracy)
    if accuracy < min_accuracy:
        raise AbortedRun(
            f"accuracy {accuracy:.4f} below {min_accuracy:.2f} at t={t:g}", field=field)
    return field


def coarse_grain(field: DensityField) -> CoarseField:
    """Per-cell arithmetic means of the valid sample values.

    Raises :class:`CellStarved` if any cell has no valid points at all.
    """
    part = field.partition
    c, p = part.cells_per_axis, part.points_per_cell_axis
    shape = (c, p, c, p)
    v = field.valid.reshape(shape)
    counts = v.sum(axis=(1, 3))
    if (counts == 0).any():
        starved = int((counts == 0).sum())
        raise CellStarved(f"{starved} cell(s) with zero valid sample points at t={field.time:g}")
    rho_sum = np.where(field.valid, field.rho, 0.0).reshape(shape).sum(axis=(1, 3))
    rqt_sum = np.where(field.valid, field.rho_qt, 0.0).reshape(shape).sum(axis=(1, 3))
    return CoarseField(field.time, part, rho_sum / counts, rqt_sum / counts, counts)


def hbar(coarse: CoarseField) -> float:
    """Coarse-grained H-function: sum over cells of rho_bar ln(rho_bar/rho_bar_qt) * cell area.

    Cells with rho_bar = 0 contribute zero (x ln x -> 0); rho_bar > 0 over a
    vanishing rho_bar_qt raises :class:`InfiniteHBar`.
    """
    rb = coarse.rho_bar
    rq = coarse.rho_qt_bar
    pos = rb > 0.0
    if np.any(pos & (rq == 0.0)):
        raise InfiniteHBar(f"cell with rho_bar > 0 but rho_bar_qt = 0 at t={coarse.time:g}")
    area = coarse.partition.cell_side ** 2
    return float(np.sum(rb[pos] * np.log(rb[pos] / rq[pos])) * area)


def hbar_series(spec: SuperpositionSpec, times, cfg: IntegratorConfig | None = None,
                partition: CellPartition | None = None,
                grids: tuple[int, ...] = STANDARD_GRIDS,
                initial_density=None, min_accuracy: float = MIN_ACCURACY,
                checkpoint_dir=None, progress=None) -> HBarSeries:
    """H-bar(t) over a time schedule, once per sampling grid.

    Runs build_density + coarse_grain + hbar for every time and every grid,
    checkpointing each completed (time, grid) field under ``checkpoint_dir``
    so interrupted runs resume without recomputation.  On an aborted run the
    exception carries the series completed so far.
    """
    times = [float(t) for t in times]
    if times != sorted(times):
        raise ValueError("times must be sorted ascending")
    if times and times[0] != 0.0:
        raise ValueError("time schedule must start at 0")
    partition = partition or CellPartition()
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)

    entries: list[HBarEntry] = []
    for t in times:
        values = []
        accuracies = []
        for g in grids:
            part_g = replace(partition, points_per_cell_axis=g)
            field = None
            ckfile = None
            if ckdir is not None:
                ckfile = ckdir / f"field_t{t:.9g}_g{g}.txt"
                if ckfile.exists():
                    field = load_field(ckfile)
            if field is None:
                try:
                    field = build_density(spec, t, part_g, cfg,
                                          initial_density=initial_density,
                                          min_accuracy=min_accuracy)
                except AbortedRun as exc:
                    if ckfile is not None and exc.field is not None:
                        save_field(ckfile.with_suffix(".aborted.txt"), exc.field)
                    exc.series = HBarSeries(entries, grids=tuple(grids))
                    raise
                if ckfile is not None:
                    save_field(ckfile, field)
            values.append(hbar(coarse_grain(field)))
            accuracies.append(field.accuracy_fraction)
        entry = HBarEntry(time=t, periods=t / (2.0 * math.pi), values=tuple(values),
                          mean=float(np.mean(values)), vmin=float(np.min(values)),
                          vmax=float(np.max(values)), accuracy_min=float(np.min(accuracies)))
        entries.append(entry)
        if progress is not None:
            progress(entry)
    return HBarSeries(entries, grids=tuple(grids))


def _smoothing_centres(partition: CellPartition) -> np.ndarray:
    """Overlapping-cell centres: spacing 20% of the cell side, extent chosen so
    the outermost cells touch the box edge (76 centres for the default box)."""
    eps = partition.cell_side
    spacing = 0.2 * eps
    half = 0.5 * (partition.box_side - eps)
    n = int(round(2.0 * half / spacing)) + 1
    return -half + spacing * np.arange(n)


def _window_means(xs: np.ndarray, centres: np.ndarray, half: float,
                  weighted: np.ndarray, counts: np.ndarray):
    """Sums of ``weighted`` and ``counts`` over index windows [c-half, c+half)
    along both axes, via 2-D prefix sums; returns (value_sums, count_sums)."""
    lo = np.searchsorted(xs, centres - half, side="left")
    hi = np.searchsorted(xs, centres + half, side="left")
    wsum = np.zeros((len(xs) + 1, len(xs) + 1))
    csum = np.zeros_like(wsum)
    wsum[1:, 1:] = weighted.cumsum(axis=0).cumsum(axis=1)
    csum[1:, 1:] = counts.cumsum(axis=0).cumsum(axis=1)

    def box(table):
        return (table[hi[:, None], hi[None, :]] - table[lo[:, None], hi[None, :]]
                - table[hi[:, None], lo[None, :]] + table[lo[:, None], lo[None, :]])

    return box(wsum), box(csum)


def smooth_density(field: DensityField) -> SmoothedField:
    """Overlapping-cell means of rho and rho_qt for display.

    Raises :class:`CellStarved` if some overlapping cell contains no valid
    sample point.
    """
    part = field.partition
    centres = _smoothing_centres(part)
    xs = field.partition.axis_points()
    half = 0.5 * part.cell_side
    v = field.valid.astype(np.float64)
    rsum, cnt = _window_means(xs, centres, half, np.where(field.valid, field.rho, 0.0), v)
    qsum, _ = _window_means(xs, centres, half, np.where(field.valid, field.rho_qt, 0.0), v)
    if (cnt == 0).any():
        raise CellStarved(f"{int((cnt == 0).sum())} empty overlapping cell(s) at t={field.time:g}")
    return SmoothedField(field.time, centres, part.cell_side, rsum / cnt, qsum / cnt)


def forward_crosscheck(spec: SuperpositionSpec, t: float, n_particles: int,
                       cfg: IntegratorConfig | None = None,
                       partition: CellPartition | None = None,
                       initial_density=None,
                       min_survival: float = MIN_ACCURACY) -> SmoothedField:
    """Independent smoothed-density estimate from forward evolution.

    A uniform grid of at least ``n_particles`` points, each weighted by the
    initial density times its area element, is evolved from t=0 to t and
    binned into the overlapping smoothing cells (mass per cell / cell area).
    Serves as a validation oracle for :func:`build_density`.
    """
    if n_particles < 10_000:
        raise ValueError(f"n_particles must be >= 10000, got {n_particles}")
    cfg = cfg or IntegratorConfig()
    partition = partition or CellPartition()
    rho0 = initial_density if initial_density is not None else rho_initial

    n_axis = math.isqrt(n_particles - 1) + 1  # smallest n with n^2 >= n_particles
    box = partition.box_side
    step = box / n_axis
    xs = -0.5 * box + (np.arange(n_axis) + 0.5) * step
    q1g, q2g = np.meshgrid(xs, xs, indexing="ij")
    starts = np.column_stack([q1g.ravel(), q2g.ravel()])
    weights = np.asarray(rho0(starts[:, 0], starts[:, 1]), dtype=np.float64) * step * step

    statuses, ends, _ = integrate_batch(spec, starts, 0.0, t, cfg)
    ok = statuses == int(Status.SUCCEEDED)
    survival = float(ok.mean())
    if survival < min_survival:
        raise AbortedRun(f"forward survival {survival:.4f} below {min_survival:.2f} at t={t:g}")

    centres = _smoothing_centres(partition)
    eps = partition.cell_side
    spacing = centres[1] - centres[0] if len(centres) > 1 else eps
    mass = np.zeros((len(centres), len(centres)))
    x, y, w = ends[ok, 0], ends[ok, 1], weights[ok]
    # point belongs to cell c iff c - eps/2 <= point < c + eps/2,
    # i.e. centre index j in (u_lo, u_hi] with u = (point -+ eps/2 - c0)/spacing
    lo_x = np.floor((x - centres[0] - 0.5 * eps) / spacing).astype(np.int64) + 1
    hi_x = np.floor((x - centres[0] + 0.5 * eps) / spacing).astype(np.int64)
    lo_y = np.floor((y - centres[0] - 0.5 * eps) / spacing).astype(np.int64) + 1
    hi_y = np.floor((y - centres[0] + 0.5 * eps) / spacing).astype(np.int64)
    max_span = int(math.ceil(eps / spacing))
    for di in range(max_span + 1):
        ix = lo_x + di
        mx = (ix <= hi_x) & (ix >= 0) & (ix < len(centres))
        if not mx.any():
            continue
        for dj in range(max_span + 1):
            iy = lo_y + dj
            m = mx & (iy <= hi_y) & (iy >= 0) & (iy < len(centres))
            if m.any():
                np.add.at(mass, (ix[m], iy[m]), w[m])

    rho_smooth = mass / (eps * eps)
    # analytic rho_qt smoothed over the same cells, from the partition's sample grid
    xs_part = partition.axis_points()
    q1p, q2p = np.meshgrid(xs_part, xs_part, indexing="ij")
    rq = rho_qt(spec, q1p, q2p, t)
    ones = np.ones_like(rq)
    qsum, cnt = _window_means(xs_part, centres, 0.5 * eps, rq, ones)
    return SmoothedField(float(t), centres, eps, rho_smooth, qsum / cnt)


def smoothed_l1_distance(a: SmoothedField, b: SmoothedField) -> tuple[float, float]:
    """(L1 distance, total mass of ``a``) of two smoothed rho fields on the
    same lattice, both measured with the lattice spacing as area element."""
    if a.rho.shape != b.rho.shape:
        raise ValueError("smoothed fields live on different lattices")
    spacing = a.centres[1] - a.centres[0]
    da = spacing * spacing
    l1 = float(np.abs(a.rho - b.rho).sum() * da)
    mass = float(a.rho.sum() * da)
    return l1, mass


# -- field files and heatmaps -------------------------------------------------

def save_field(path, field: DensityField) -> None:
    """One self-describing text file: a JSON header line, then the rho,
    rho_qt and valid matrices (full float precision, row = q1 index)."""
    part = field.partition
    header = json.dumps({
        "time": field.time,
        "box_side": part.box_side,
        "cells_per_axis": part.cells_per_axis,
        "points_per_cell_axis": part.points_per_cell_axis,
        "accuracy_fraction": field.accuracy_fraction,
    }, sort_keys=True)
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# " + header + "\n")
        np.savetxt(fh, field.rho, fmt="%.17g")
        np.savetxt(fh, field.rho_qt, fmt="%.17g")
        np.savetxt(fh, field.valid.astype(np.int8), fmt="%d")


def load_field(path) -> DensityField:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path} is not a density-field file")
        meta = json.loads(first[2:])
        data = np.loadtxt(fh)
    part = CellPartition(meta["box_side"], meta["cells_per_axis"], meta["points_per_cell_axis"])
    n = part.points_per_axis
    if data.shape != (3 * n, n):
        raise ValueError(f"{path}: expected {3 * n}x{n} payload, got {data.shape}")
    return DensityField(float(meta["time"]), part, data[:n].copy(), data[n:2 * n].copy(),
                        data[2 * n:] != 0.0, float(meta["accuracy_fraction"]))


def write_pgm(path, values: np.ndarray, scale: float | None = None) -> float:
    """8-bit binary PGM heatmap of a nonnegative matrix, row-major.

    ``scale`` is the value mapped to 255 (defaults to the matrix maximum);
    the value used is returned so callers can record it in metadata.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("PGM output needs a 2-D matrix")
    if scale is None:
        scale = float(values.max()) if values.size and values.max() > 0 else 1.0
    levels = np.clip(np.rint(values / scale * 255.0), 0, 255).astype(np.uint8)
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{values.shape[1]} {values.shape[0]}\n255\n".encode())
        fh.write(levels.tobytes())
    return scale
