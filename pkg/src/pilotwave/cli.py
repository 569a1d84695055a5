"""Batch front-end: run configuration, experiment commands, checkpoint/resume.

Commands
--------
phases   write a seeded random phase-set file
hbar     H-bar(t) series over a period schedule, with fit and saturation time
density  smoothed density snapshots (text fields + PGM heatmaps)
confine  trajectory traces, square fates and the coverage metric
fit      re-fit an existing H-bar CSV
check    fast self-validation suite (nonzero exit on any failure)

Every value in the JSON config file is optional and can be overridden by a
flag; each run writes a metadata JSON with the full effective configuration.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import shutil
import subprocess
import sys
import time as _time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, confinement, density, wavefunction
from .integrator import IntegratorConfig, Status, integrate_batch
from .wavefunction import SuperpositionSpec

TAU = 2.0 * math.pi

#: hbar schedule (in periods): every period to 15, then sparser to 50.
DEFAULT_SCHEDULE = list(range(16)) + [20, 30, 40, 50]

DEFAULTS = {
    "phase_file": None,
    "preset": None,
    "seed": None,
    "modes_per_axis": None,
    "out_dir": "runs/out",
    "resume": False,
    "periods": None,              # truncate/extend the schedule up to this period
    "periods_schedule": None,     # explicit list of periods, overrides "periods"
    "points_per_cell": [29, 30, 31],
    "equilibrium_start": False,
    "snapshot_periods": [],
    "density_periods": None,
    "n_particles": 102400,
    "partition": {"box_side": 10.0, "cells_per_axis": 16},
    "integrator": {
        "position_tolerance": 0.025,
        "local_error_tolerance": 1e-8,
        "max_steps_total": 10_000_000,
        "sub_intervals": 10,
        "max_steps_per_sub_interval": 1_000_000,
        "min_step": 1e-12,
        "initial_step": 1e-3,
        "node_threshold": wavefunction.NODE_THRESHOLD,
    },
    "confine": {
        "points": [list(p) for p in confinement.DEFAULT_START_POINTS],
        "square_side": 0.2,
        "square_points_per_axis": 10,
        "stride_periods": confinement.DEFAULT_STRIDE_PERIODS,
        "periods": 25,
    },
    "check": {
        "points_per_cell": 15,
        "n_particles": 102400,
        "round_trip_samples": 100,
    },
}

PRESETS = {
    "m4-paper": {
        "phases": wavefunction.M4_RESIDUE_PHASES,
        "density_periods": [0, 25, 50],
        "confine_periods": 25,
    },
    "m4-alt": {
        "phases": wavefunction.M4_RELAXING_PHASES,
        "periods": 30,
        "density_periods": [0, 25, 50],
        "confine_periods": 25,
    },
    "m25-random": {
        "modes_per_axis": 5,
        "seed": 1,
        "periods_schedule": [0, 1, 2, 3, 4, 5],
        "density_periods": [0, 2.5, 5],
        "confine_periods": 5,
    },
}


class ConfigError(ValueError):
    pass


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _deep_merge(out[key], val)
        elif val is not None:
            out[key] = copy.deepcopy(val)
    return out


def build_config(args: argparse.Namespace) -> dict:
    """defaults < preset < config file < command-line flags."""
    cfg = copy.deepcopy(DEFAULTS)

    file_cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")

    preset_name = getattr(args, "preset", None) or file_cfg.get("preset")
    if preset_name:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
        preset = PRESETS[preset_name]
        overlay = {k: v for k, v in preset.items() if k not in ("phases", "confine_periods")}
        if "confine_periods" in preset:
            overlay["confine"] = {"periods": preset["confine_periods"]}
        cfg = _deep_merge(cfg, overlay)
        cfg["preset"] = preset_name

    cfg = _deep_merge(cfg, file_cfg)

    flag_map = {
        "out_dir": "out_dir", "seed": "seed", "phase_file": "phase_file",
        "modes_per_axis": "modes_per_axis", "periods": "periods",
        "n_particles": "n_particles",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "points_per_cell", None) is not None:
        cfg["points_per_cell"] = args.points_per_cell
    if getattr(args, "equilibrium_start", False):
        cfg["equilibrium_start"] = True
    if getattr(args, "resume", False):
        cfg["resume"] = True
    if getattr(args, "times", None) is not None:
        cfg["density_periods"] = args.times
    if getattr(args, "confine_periods", None) is not None:
        cfg["confine"]["periods"] = args.confine_periods
    return cfg


def resolve_spec(cfg: dict) -> tuple[SuperpositionSpec, dict]:
    """Exactly one phase source: a phase file, a preset, or seed + modes_per_axis."""
    sources = []
    if cfg.get("phase_file"):
        sources.append("phase_file")
    if cfg.get("preset"):
        sources.append("preset")
    if cfg.get("seed") is not None and cfg.get("modes_per_axis") and not cfg.get("preset"):
        sources.append("seed")
    if len(sources) != 1:
        raise ConfigError(
            "exactly one phase source required: --phase-file, --preset, or "
            f"--seed with --modes-per-axis (got {sources or 'none'})")

    source = sources[0]
    if source == "phase_file":
        path = Path(cfg["phase_file"])
        if not path.exists():
            raise ConfigError(f"phase file not found: {path}")
        spec, seed = wavefunction.load_phases(path)
        return spec, {"source": "phase_file", "path": str(path), "seed": seed}
    if source == "preset":
        preset = PRESETS[cfg["preset"]]
        if "phases" in preset:
            spec = SuperpositionSpec(preset["phases"].shape[0], preset["phases"])
            return spec, {"source": "preset", "preset": cfg["preset"]}
        seed = cfg.get("seed")
        if seed is None:
            seed = preset["seed"]
        k = cfg.get("modes_per_axis") or preset["modes_per_axis"]
        spec = SuperpositionSpec(k, wavefunction.random_phases(k, seed))
        return spec, {"source": "preset", "preset": cfg["preset"], "seed": seed,
                      "modes_per_axis": k}
    seed = int(cfg["seed"])
    k = int(cfg["modes_per_axis"])
    spec = SuperpositionSpec(k, wavefunction.random_phases(k, seed))
    return spec, {"source": "seed", "seed": seed, "modes_per_axis": k}


def _version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             cwd=Path(__file__).parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"pilotwave-{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"pilotwave-{__version__}"


def _thread_count() -> int:
    import numba
    env = os.environ.get("PILOTWAVE_THREADS")
    if env:
        numba.set_num_threads(max(1, int(env)))
    return numba.get_num_threads()


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_metadata(out_dir: Path, name: str, cfg: dict, extra: dict) -> Path:
    doc = {
        "version": _version_string(),
        "command": name,
        "threads": _thread_count(),
        "config": _sanitize(cfg),
    }
    doc.update(_sanitize(extra))
    path = out_dir / "metadata.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _integrator_config(cfg: dict) -> IntegratorConfig:
    return IntegratorConfig(**cfg["integrator"])


def _partition(cfg: dict, points_per_cell: int) -> density.CellPartition:
    part = cfg["partition"]
    return density.CellPartition(part["box_side"], part["cells_per_axis"], points_per_cell)


def _schedule_periods(cfg: dict) -> list[float]:
    if cfg.get("periods_schedule") is not None:
        sched = [float(p) for p in cfg["periods_schedule"]]
    else:
        horizon = cfg.get("periods")
        horizon = 50.0 if horizon is None else float(horizon)
        sched = [float(p) for p in DEFAULT_SCHEDULE if p <= horizon]
        if not sched or sched[-1] != horizon:
            sched.append(horizon)
    if sched != sorted(sched) or sched[0] != 0.0:
        raise ConfigError(f"period schedule must be ascending from 0, got {sched}")
    return sched


def _write_snapshot(out_dir: Path, tag: str, field: density.DensityField) -> dict:
    """Field text file plus smoothed rho / rho_qt heatmaps; returns file records."""
    field_path = out_dir / f"field_{tag}.txt"
    density.save_field(field_path, field)
    smooth = density.smooth_density(field)
    rec = {"field": field_path.name}
    for label, mat in (("rho", smooth.rho), ("rho_qt", smooth.rho_qt)):
        pgm = out_dir / f"smooth_{label}_{tag}.pgm"
        # image rows run from +q2 down to -q2, columns from -q1 to +q1
        scale = density.write_pgm(pgm, mat.T[::-1])
        rec[f"pgm_{label}"] = {"file": pgm.name, "value_at_255": scale,
                               "rows": "q2 descending", "cols": "q1 ascending"}
    return rec


def cmd_phases(args) -> int:
    if args.modes_per_axis is None or args.seed is None:
        raise ConfigError("phases requires --seed and --modes-per-axis")
    k = int(args.modes_per_axis)
    if k < 1:
        raise ConfigError(f"modes_per_axis must be >= 1, got {k}")
    spec = SuperpositionSpec(k, wavefunction.random_phases(k, args.seed))
    out = Path(args.out or "phases.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    wavefunction.save_phases(out, spec, seed=args.seed)
    print(f"wrote {out}")
    return 0


def cmd_hbar(args) -> int:
    cfg = build_config(args)
    spec, source = resolve_spec(cfg)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ck_dir = out_dir / "checkpoints"
    if ck_dir.exists() and not cfg["resume"]:
        shutil.rmtree(ck_dir)

    periods = _schedule_periods(cfg)
    times = [p * TAU for p in periods]
    grids = tuple(int(g) for g in cfg["points_per_cell"])
    icfg = _integrator_config(cfg)
    base_part = _partition(cfg, grids[0])
    initial = (lambda q1, q2: wavefunction.rho_qt(spec, q1, q2, 0.0)) \
        if cfg["equilibrium_start"] else None

    t0 = _time.monotonic()
    status = "completed"
    try:
        series = density.hbar_series(
            spec, times, icfg, partition=base_part, grids=grids,
            initial_density=initial, checkpoint_dir=ck_dir,
            progress=lambda e: print(
                f"  period {e.periods:6.2f}: hbar mean {e.mean:.5f} "
                f"[{e.vmin:.5f}, {e.vmax:.5f}] accuracy {e.accuracy_min:.4f}"))
    except density.AbortedRun as exc:
        print(f"ABORTED: {exc}", file=sys.stderr)
        series = exc.series if exc.series is not None else analysis.HBarSeries([], grids=grids)
        status = "aborted"

    extra = {"phase_source": source, "status": status, "schedule_periods": periods,
             "wall_clock_s": None, "fit": None, "outputs": {}}
    if len(series):
        csv_path = out_dir / "series.csv"
        analysis.series_to_csv(csv_path, series)
        extra["outputs"]["series"] = csv_path.name
        extra["accuracy_min"] = float(min(e.accuracy_min for e in series.entries))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", analysis.NonPositiveValueWarning)
            rows = analysis.log_series(series)
        if rows:
            with (out_dir / "log_series.csv").open("w") as fh:
                fh.write("time,ln_mean,ln_min,ln_max\n")
                for t, lm, lmin, lmax in rows:
                    fh.write(f"{t!r},{lm!r},{lmin!r},{lmax!r}\n")
            extra["outputs"]["log_series"] = "log_series.csv"
    if len(series) >= 4 and status == "completed":
        try:
            fit = analysis.with_saturation(series, analysis.fit_exponential(series))
            fit_doc = {"a": fit.a, "b": fit.b, "c": fit.c,
                       "rms_residual": fit.rms_residual, "t_sat": fit.t_sat,
                       "t_sat_periods": None if fit.t_sat is None else fit.t_sat / TAU}
            (out_dir / "fit.json").write_text(json.dumps(fit_doc, indent=2) + "\n")
            extra["fit"] = fit_doc
            extra["outputs"]["fit"] = "fit.json"
        except analysis.DegenerateSeries as exc:
            extra["fit"] = {"skipped": str(exc)}

    snapshots = {}
    for p in cfg["snapshot_periods"]:
        part = _partition(cfg, grids[len(grids) // 2])
        field = density.build_density(spec, p * TAU, part, icfg, initial_density=initial)
        snapshots[f"period_{p:g}"] = _write_snapshot(out_dir, f"p{p:g}", field)
    if snapshots:
        extra["outputs"]["snapshots"] = snapshots

    extra["wall_clock_s"] = round(_time.monotonic() - t0, 3)
    write_metadata(out_dir, "hbar", cfg, extra)
    print(f"{status}: outputs in {out_dir}")
    return 0 if status == "completed" else 1


def cmd_density(args) -> int:
    cfg = build_config(args)
    spec, source = resolve_spec(cfg)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    periods = cfg.get("density_periods")
    if periods is None:
        periods = [0, 25, 50]
    grids = cfg["points_per_cell"]
    grid = int(grids[0] if isinstance(grids, (list, tuple)) else grids)
    part = _partition(cfg, grid)
    icfg = _integrator_config(cfg)
    initial = (lambda q1, q2: wavefunction.rho_qt(spec, q1, q2, 0.0)) \
        if cfg["equilibrium_start"] else None

    t0 = _time.monotonic()
    outputs = {}
    status = "completed"
    try:
        for p in periods:
            field = density.build_density(spec, float(p) * TAU, part, icfg,
                                          initial_density=initial)
            outputs[f"period_{p:g}"] = _write_snapshot(out_dir, f"p{p:g}", field)
            print(f"  period {p:g}: accuracy {field.accuracy_fraction:.4f}")
    except density.AbortedRun as exc:
        print(f"ABORTED: {exc}", file=sys.stderr)
        if exc.field is not None:
            density.save_field(out_dir / "field_aborted.txt", exc.field)
        status = "aborted"

    write_metadata(out_dir, "density", cfg, {
        "phase_source": source, "status": status, "density_periods": periods,
        "wall_clock_s": round(_time.monotonic() - t0, 3), "outputs": outputs})
    print(f"{status}: outputs in {out_dir}")
    return 0 if status == "completed" else 1


def cmd_confine(args) -> int:
    cfg = build_config(args)
    spec, source = resolve_spec(cfg)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ccfg = cfg["confine"]
    icfg = _integrator_config(cfg)
    points = np.asarray(ccfg["points"], dtype=np.float64)
    t_end = float(ccfg["periods"]) * TAU
    stride = float(ccfg["stride_periods"]) * TAU

    t0 = _time.monotonic()
    traces = confinement.trace_many(spec, points, t_end, stride, icfg)
    with (out_dir / "traces.csv").open("w") as fh:
        fh.write("id,time,q1,q2,status\n")
        for i, tr in enumerate(traces):
            name = tr.status.name
            for t, (x, y) in zip(tr.times, tr.points):
                fh.write(f"{i},{float(t)!r},{float(x)!r},{float(y)!r},{name}\n")

    fates = []
    with (out_dir / "squares.csv").open("w") as fh:
        fh.write("id,time,q1,q2,status\n")
        for i, centre in enumerate(points):
            fate = confinement.square_fate(spec, centre, float(ccfg["square_side"]),
                                           t_end, icfg,
                                           points_per_axis=int(ccfg["square_points_per_axis"]))
            fates.append(fate)
            for (x, y), st in zip(fate.final, fate.statuses):
                fh.write(f"{i},{t_end!r},{float(x)!r},{float(y)!r},{Status(int(st)).name}\n")

    part = _partition(cfg, 8)
    cov = confinement.coverage(traces, part, spec)
    # per-trace scores on a common five-period prefix stay comparable
    # between runs of different lengths
    horizon = min(t_end, 5.0 * TAU)
    per_trace = confinement.per_trace_coverage(traces, part, spec, horizon=horizon)
    summary = {
        "coverage": cov,
        "grade": confinement.confinement_grade(cov),
        "per_trace_coverage": per_trace,
        "per_trace_horizon_periods": horizon / TAU,
        "per_trace_mean": float(np.mean(per_trace)),
        "per_trace_grade": confinement.confinement_grade(float(np.mean(per_trace))),
        "grade_thresholds": {"negligible": confinement.COVERAGE_NEGLIGIBLE,
                             "mild": confinement.COVERAGE_MILD},
        "clustered_sigma": confinement.CLUSTERED_SIGMA,
        "squares": [{"centre": f.centre.tolist(),
                     "dispersion": confinement.dispersion(f),
                     "clustered": confinement.dispersion(f) < confinement.CLUSTERED_SIGMA,
                     "valid_points": int(f.valid.sum())} for f in fates],
        "trace_statuses": [tr.status.name for tr in traces],
    }
    write_metadata(out_dir, "confine", cfg, {
        "phase_source": source, "confinement": summary,
        "wall_clock_s": round(_time.monotonic() - t0, 3),
        "outputs": {"traces": "traces.csv", "squares": "squares.csv"}})
    print(f"coverage {cov:.4f} ({summary['grade']}); "
          f"per-trace mean {summary['per_trace_mean']:.4f} "
          f"({summary['per_trace_grade']}); outputs in {out_dir}")
    return 0


def cmd_fit(args) -> int:
    series = analysis.series_from_csv(args.csv)
    fit = analysis.with_saturation(series, analysis.fit_exponential(series))
    doc = {"a": fit.a, "b": fit.b, "c": fit.c, "rms_residual": fit.rms_residual,
           "t_sat": fit.t_sat,
           "t_sat_periods": None if fit.t_sat is None else fit.t_sat / TAU,
           "source_csv": str(args.csv)}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_check(args) -> int:
    cfg = build_config(args)
    spec, source = resolve_spec(cfg)
    icfg = _integrator_config(cfg)
    ccfg = cfg["check"]
    rng = np.random.default_rng(20260810)
    results = []

    def record(name: str, passed: bool, detail: str):
        results.append((name, passed, detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")

    # analytic vs finite-difference velocity at points with appreciable density
    pts = []
    while len(pts) < 100:
        cand = rng.uniform(-2.5, 2.5, size=2)
        t = rng.uniform(0.0, TAU)
        if wavefunction.rho_qt(spec, cand[0], cand[1], t) > 1e-6:
            pts.append((cand[0], cand[1], t))
    worst = 0.0
    h = 1e-6
    for x, y, t in pts:
        v1, v2 = wavefunction.velocity(spec, x, y, t)
        p0 = wavefunction.psi(spec, x, y, t)
        d1 = (wavefunction.psi(spec, x + h, y, t) - wavefunction.psi(spec, x - h, y, t)) / (2 * h)
        d2 = (wavefunction.psi(spec, x, y + h, t) - wavefunction.psi(spec, x, y - h, t)) / (2 * h)
        f1 = (d1 / p0).imag
        f2 = (d2 / p0).imag
        rel = math.hypot(f1 - v1, f2 - v2) / max(math.hypot(v1, v2), 1e-3)
        worst = max(worst, rel)
    record("velocity_gradient", worst <= 1e-6, f"max_rel={worst:.3e} (<= 1e-06)")

    # norm of |psi|^2 by Gauss-Hermite quadrature
    nodes, weights = np.polynomial.hermite.hermgauss(48)
    wmod = weights * np.exp(nodes ** 2)
    q1g, q2g = np.meshgrid(nodes, nodes, indexing="ij")
    worst = 0.0
    for t in (0.0, 1.0, math.pi):
        total = float(np.sum(wmod[:, None] * wmod[None, :]
                             * wavefunction.rho_qt(spec, q1g, q2g, t)))
        worst = max(worst, abs(total - 1.0))
    record("norm", worst <= 1e-6, f"max|norm-1|={worst:.3e} (<= 1e-06)")

    # exact time periodicity: 100 random times, 100 random points each
    worst = 0.0
    for t in rng.uniform(0.0, TAU, size=100):
        qs = rng.uniform(-4.0, 4.0, size=(100, 2))
        diff = np.abs(wavefunction.psi(spec, qs[:, 0], qs[:, 1], t + TAU)
                      - wavefunction.psi(spec, qs[:, 0], qs[:, 1], t))
        worst = max(worst, float(diff.max()))
    record("periodicity", worst <= 1e-12, f"max|dpsi|={worst:.3e} (<= 1e-12)")

    # equilibrium start must give H-bar = 0 through the full pipeline
    part = _partition(cfg, int(ccfg["points_per_cell"]))
    try:
        field = density.build_density(
            spec, TAU, part, icfg,
            initial_density=lambda q1, q2: wavefunction.rho_qt(spec, q1, q2, 0.0))
        h0 = density.hbar(density.coarse_grain(field))
        record("equilibrium_null", abs(h0) <= 0.01,
               f"|hbar|={abs(h0):.3e} at t=2pi, accuracy={field.accuracy_fraction:.4f} (<= 0.01)")
    except (density.AbortedRun, density.CellStarved) as exc:
        record("equilibrium_null", False, f"pipeline failure: {exc}")

    # round-trip precision and tolerance-convergence ordering
    n_rt = int(ccfg["round_trip_samples"])
    starts = rng.uniform(-3.0, 3.0, size=(n_rt, 2))
    disps = {}
    for tol_scale in (1.0, 0.1):
        tcfg = IntegratorConfig(
            position_tolerance=icfg.position_tolerance,
            local_error_tolerance=icfg.local_error_tolerance * tol_scale,
            max_steps_total=icfg.max_steps_total, sub_intervals=icfg.sub_intervals,
            max_steps_per_sub_interval=icfg.max_steps_per_sub_interval,
            min_step=icfg.min_step, initial_step=icfg.initial_step,
            node_threshold=icfg.node_threshold)
        st_b, ends_b, _ = integrate_batch(spec, starts, TAU, 0.0, tcfg)
        st_f, ends_f, _ = integrate_batch(spec, ends_b, 0.0, TAU, tcfg)
        ok = (st_b == int(Status.SUCCEEDED)) & (st_f == int(Status.SUCCEEDED))
        d = np.full(n_rt, np.inf)
        d[ok] = np.hypot(ends_f[ok, 0] - starts[ok, 0], ends_f[ok, 1] - starts[ok, 1])
        disps[tol_scale] = d
    tol2 = 2.0 * icfg.position_tolerance
    frac = float((disps[1.0] <= tol2).mean())
    record("round_trip", frac >= 0.99,
           f"fraction within {tol2:g}: {frac:.3f} (>= 0.99), worst={disps[1.0].max():.2e}")
    med1 = float(np.median(disps[1.0]))
    med2 = float(np.median(disps[0.1]))
    record("convergence_ordering", med2 <= med1,
           f"median displacement {med1:.2e} -> {med2:.2e} at 10x tighter tolerance")

    # backtracked vs forward-evolved smoothed density
    try:
        bt = density.smooth_density(density.build_density(spec, TAU, part, icfg))
        fw = density.forward_crosscheck(spec, TAU, int(ccfg["n_particles"]), icfg,
                                        partition=part)
        l1, mass = density.smoothed_l1_distance(bt, fw)
        record("forward_crosscheck", l1 <= 0.05 * mass,
               f"L1={l1:.4f} vs 5% of mass {mass:.4f} (limit {0.05 * mass:.4f})")
    except (density.AbortedRun, density.CellStarved) as exc:
        record("forward_crosscheck", False, f"pipeline failure: {exc}")

    failed = [name for name, passed, _ in results if not passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if getattr(args, "out_dir", None):
        out_dir = Path(cfg["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metadata(out_dir, "check", cfg, {
            "phase_source": source,
            "checks": [{"name": n, "passed": p, "detail": d} for n, p, d in results]})
    return 1 if failed else 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="bundled phase set and schedule")
    p.add_argument("--seed", type=int, help="seed for random phases")
    p.add_argument("--modes-per-axis", dest="modes_per_axis", type=int,
                   help="modes per axis (total modes = square of this)")
    p.add_argument("--phase-file", dest="phase_file", help="phase-set JSON file")
    p.add_argument("--periods", type=float, help="run length in periods")
    p.add_argument("--points-per-cell", dest="points_per_cell",
                   type=lambda s: [int(v) for v in s.split(",")],
                   help="sampling grid(s) per cell axis, e.g. 30 or 29,30,31")
    p.add_argument("--equilibrium-start", dest="equilibrium_start",
                   action="store_true",
                   help="start from the equilibrium density instead of the ground state")
    p.add_argument("--resume", action="store_true",
                   help="reuse existing checkpoints instead of recomputing")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pilotwave",
        description="Quantum relaxation for the 2-D harmonic oscillator in pilot-wave dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phases", help="write a seeded random phase-set file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--modes-per-axis", dest="modes_per_axis", type=int, required=True)
    p.add_argument("--out", help="output path (default phases.json)")
    p.set_defaults(func=cmd_phases)

    p = sub.add_parser("hbar", help="H-bar(t) series with fit and saturation time")
    _add_common(p)
    p.set_defaults(func=cmd_hbar)

    p = sub.add_parser("density", help="density snapshots: field files + PGM heatmaps")
    _add_common(p)
    p.add_argument("--times", type=float, nargs="+",
                   help="snapshot times in periods, e.g. 0 25 50")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("confine", help="trajectory traces, square fates, coverage")
    _add_common(p)
    p.add_argument("--confine-periods", dest="confine_periods", type=float,
                   help="trace length in periods")
    p.set_defaults(func=cmd_confine)

    p = sub.add_parser("fit", help="re-fit an existing H-bar CSV")
    p.add_argument("--csv", required=True, help="series CSV written by the hbar command")
    p.add_argument("--out", help="write the fit JSON here instead of stdout")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("check", help="fast self-validation suite")
    _add_common(p)
    p.set_defaults(func=cmd_check)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
