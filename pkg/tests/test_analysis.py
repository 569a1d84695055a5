from __future__ import annotations

import math

import numpy as np
import pytest

from pilotwave import (FitResult, HBarEntry, HBarSeries, fit_exponential,
                       log_series, saturation_time)
from pilotwave.analysis import (DegenerateSeries, NonPositiveValueWarning,
                                series_from_csv, series_to_csv, with_saturation)

TAU = 2.0 * math.pi


def make_series(periods, values_fn, spread=0.0):
    entries = []
    for k in periods:
        v = values_fn(k)
        entries.append(HBarEntry(time=k * TAU, periods=float(k),
                                 values=(v - spread, v, v + spread),
                                 mean=v, vmin=v - spread, vmax=v + spread))
    return HBarSeries(entries, grids=(29, 30, 31))


class TestSeriesValidation:
    def test_rejects_nonincreasing_times(self):
        e = HBarEntry(0.0, 0.0, (1.0,), 1.0, 1.0, 1.0)
        e2 = HBarEntry(0.0, 0.0, (1.0,), 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            HBarSeries([e, e2])

    def test_rejects_mean_outside_bounds(self):
        with pytest.raises(ValueError):
            HBarSeries([HBarEntry(0.0, 0.0, (1.0,), 2.0, 0.5, 1.5)])


class TestFit:
    def test_exact_model_recovery(self):
        series = make_series(range(21), lambda k: 0.5 * math.exp(-0.3 * k) + 0.07)
        fit = fit_exponential(series)
        assert fit.a == pytest.approx(0.5, abs=1e-6)
        assert fit.b == pytest.approx(0.3, abs=1e-6)
        assert fit.c == pytest.approx(0.07, abs=1e-6)
        assert fit.rms_residual <= 1e-9

    def test_recovery_over_random_draws(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            a = rng.uniform(0.1, 2.0)
            b = rng.uniform(0.05, 2.0)
            c = rng.uniform(0.0, a)
            series = make_series(range(25), lambda k: a * math.exp(-b * k) + c)
            fit = fit_exponential(series)
            assert fit.a == pytest.approx(a, abs=1e-6)
            assert fit.b == pytest.approx(b, abs=1e-6)
            assert fit.c == pytest.approx(c, abs=1e-6)

    def test_constraint_pins_start_value(self):
        rng = np.random.default_rng(4)
        series = make_series(range(12),
                             lambda k: 0.4 * math.exp(-0.5 * k) + 0.05 + 0.01 * rng.standard_normal())
        fit = fit_exponential(series)
        assert fit.a + fit.c == pytest.approx(series.means[0], abs=1e-12)
        assert fit.b >= 0.0
        assert fit.c >= 0.0

    def test_local_optimality_under_perturbation(self):
        rng = np.random.default_rng(5)
        noisy = make_series(range(15),
                            lambda k: 0.6 * math.exp(-0.4 * k) + 0.08 + 0.005 * rng.standard_normal())
        fit = fit_exponential(noisy)
        periods = noisy.periods
        y = noisy.means
        y0 = y[0]

        def rms(b, c):
            r = y - (y0 - c) * np.exp(-b * periods) - c
            return math.sqrt(float(r @ r) / len(y))

        base = rms(fit.b, fit.c)
        assert base == pytest.approx(fit.rms_residual, rel=1e-12)
        rng2 = np.random.default_rng(6)
        for _ in range(20):
            db = 1.0 + rng2.choice([-0.01, 0.01])
            dc = 1.0 + rng2.choice([-0.01, 0.01])
            assert rms(fit.b * db, fit.c * dc) >= base

    def test_monotone_data_gives_nonnegative_rate(self):
        series = make_series(range(10), lambda k: 1.0 / (1.0 + k))
        assert fit_exponential(series).b >= 0.0

    def test_degenerate_cases(self):
        with pytest.raises(DegenerateSeries):
            fit_exponential(make_series(range(3), lambda k: math.exp(-k)))
        with pytest.raises(DegenerateSeries):
            fit_exponential(make_series(range(8), lambda k: 1.0))
        with pytest.raises(DegenerateSeries):
            fit_exponential(make_series(range(8), lambda k: -1.0 + 0.1 * k))


class TestSaturation:
    def test_constant_series_saturates_at_zero(self):
        series = make_series(range(6), lambda k: 0.07)
        fit = FitResult(a=0.0, b=1.0, c=0.07, rms_residual=0.0)
        assert saturation_time(series, fit) == 0.0

    def test_pure_exponential_crosses_floor(self):
        # 0.5 exp(-0.3 k) < 0.02 first holds at k = 11
        series = make_series(range(21), lambda k: 0.5 * math.exp(-0.3 * k))
        fit = fit_exponential(series)
        assert fit.c == pytest.approx(0.0, abs=1e-9)
        assert saturation_time(series, fit) == pytest.approx(11 * TAU)

    def test_never_settling_series(self):
        series = make_series(range(5), lambda k: 1.0 - 0.1 * k)
        fit = FitResult(a=1.0, b=0.1, c=0.0, rms_residual=0.0)
        assert saturation_time(series, fit) is None

    def test_band_widens_with_grid_spread(self):
        series = make_series(range(6), lambda k: 0.2, spread=0.08)
        fit = FitResult(a=0.0, b=1.0, c=0.1, rms_residual=0.0)
        # |0.2 - 0.1| <= max(2*0.16, 0.02) everywhere
        assert saturation_time(series, fit) == 0.0

    def test_with_saturation_fills_field(self):
        series = make_series(range(21), lambda k: 0.5 * math.exp(-0.3 * k) + 0.07)
        fit = with_saturation(series, fit_exponential(series))
        assert fit.t_sat is not None


class TestLogSeries:
    def test_unit_mean_gives_zero(self):
        series = make_series([0, 1, 2], lambda k: 1.0 if k == 0 else 1.0 / (k + 1))
        rows = log_series(series)
        assert rows[0][1] == 0.0

    def test_exponential_slope(self):
        series = make_series(range(10), lambda k: math.exp(-k))
        rows = log_series(series)
        logs = np.array([r[1] for r in rows])
        slopes = np.diff(logs) / np.diff([r[0] / TAU for r in rows])
        np.testing.assert_allclose(slopes, -1.0, rtol=1e-12)

    def test_truncates_at_nonpositive_mean(self):
        vals = {0: 1.0, 1: 0.5, 2: -0.1, 3: 0.2}
        series = make_series(range(4), lambda k: vals[k])
        with pytest.warns(NonPositiveValueWarning):
            rows = log_series(series)
        assert len(rows) == 2

    def test_nonpositive_error_bar_becomes_nan(self):
        series = make_series([0, 1], lambda k: 0.05, spread=0.1)
        rows = log_series(series)
        assert math.isnan(rows[0][2])
        assert rows[0][1] == pytest.approx(math.log(0.05))


class TestCsv:
    def test_round_trip(self, tmp_path):
        series = make_series(range(8), lambda k: 0.5 * math.exp(-0.4 * k) + 0.03,
                             spread=0.004)
        path = tmp_path / "series.csv"
        series_to_csv(path, series)
        header = path.read_text().splitlines()[0]
        assert header == ("time,periods,hbar_grid29,hbar_grid30,hbar_grid31,"
                          "hbar_mean,hbar_min,hbar_max,accuracy_min")
        loaded = series_from_csv(path)
        assert loaded.grids == (29, 30, 31)
        assert len(loaded) == len(series)
        for a, b in zip(loaded.entries, series.entries):
            assert a == b

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,hbar_mean\n0.0,1.0\n")
        with pytest.raises(ValueError):
            series_from_csv(path)
