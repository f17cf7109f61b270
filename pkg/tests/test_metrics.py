import numpy as np
import pytest

from hiercast.errors import DegenerateSeriesError, ValidationError
from hiercast.hierarchy import WeightTable, aggregate, build_hierarchy, compute_weights
from hiercast.metrics import (
    QUANTILE_LEVELS, abs_scale_denominator, evaluate_point, evaluate_quantiles,
    pinball, rmsse, scale_denominator, spl, trim_leading_zeros, wrmsse, wspl,
)


# -- independent oracles ------------------------------------------------------

def oracle_rmsse(history, actual, forecast):
    """Direct transcription of the scaled-error formula, loops only."""
    y = list(history)
    while y and y[0] == 0:
        y.pop(0)
    n = len(y)
    den = sum((y[t] - y[t - 1]) ** 2 for t in range(1, n)) / (n - 1)
    num = sum((a - f) ** 2 for a, f in zip(actual, forecast)) / len(actual)
    return (num / den) ** 0.5


def oracle_spl(history, actual, q, u):
    y = list(history)
    while y and y[0] == 0:
        y.pop(0)
    n = len(y)
    den = sum(abs(y[t] - y[t - 1]) for t in range(1, n)) / (n - 1)
    total = 0.0
    for a, qq in zip(actual, q):
        if qq <= a:
            total += u * (a - qq)
        else:
            total += (1 - u) * (qq - a)
    return total / len(actual) / den


class TestScaleDenominator:
    def test_alternating_history(self):
        assert scale_denominator([0, 2, 0, 2]) == pytest.approx(4.0, abs=1e-15)

    def test_constant_history_degenerate(self):
        with pytest.raises(DegenerateSeriesError):
            scale_denominator([5, 5, 5])

    def test_trim_then_constant_degenerate(self):
        # [0, 0, 1, 1] trims to [1, 1]: no nonzero difference remains
        with pytest.raises(DegenerateSeriesError):
            scale_denominator([0, 0, 1, 1])

    def test_trim_flag_off_keeps_leading_zeros(self):
        # untrimmed [0, 0, 1, 1]: diffs 0, 1, 0 -> 1/3
        assert scale_denominator([0, 0, 1, 1], trim_leading=False) == pytest.approx(1 / 3)

    def test_all_zero_history_degenerate(self):
        with pytest.raises(DegenerateSeriesError):
            scale_denominator([0, 0, 0])

    def test_trim_helper(self):
        assert trim_leading_zeros(np.array([0.0, 0.0, 3.0, 0.0])).tolist() == [3.0, 0.0]


class TestRmsse:
    def test_perfect_forecast_zero(self):
        assert rmsse([0, 2, 0, 2], [2, 0], [2, 0]) == 0.0

    def test_direct_formula_case(self):
        assert rmsse([0, 2, 0, 2], [2, 0], [1, 1]) == pytest.approx(0.5, abs=1e-15)

    def test_constant_offset_forecast(self):
        rng = np.random.default_rng(0)
        hist = rng.poisson(3.0, 50).astype(float)
        hist[0] = 1.0
        actual = rng.poisson(3.0, 28).astype(float)
        for c in (0.5, 2.0, -1.5):
            got = rmsse(hist, actual, actual + c)
            want = abs(c) / np.sqrt(scale_denominator(hist))
            assert got == pytest.approx(want, rel=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            hist = rng.poisson(2.0, 30).astype(float)
            if np.all(hist == hist[0]) or not hist.any():
                continue
            actual = rng.poisson(2.0, 7).astype(float)
            fc = rng.uniform(0, 5, 7)
            if len(trim_leading_zeros(hist)) < 2:
                continue
            assert rmsse(hist, actual, fc) == pytest.approx(
                oracle_rmsse(hist, actual, fc), rel=1e-12)

    def test_scale_invariance(self):
        hist = np.array([0.0, 2, 0, 2, 5, 1])
        actual = np.array([2.0, 0, 1])
        fc = np.array([1.0, 1, 1])
        base = rmsse(hist, actual, fc)
        for c in (0.5, 3.0, 100.0):
            assert rmsse(c * hist, c * actual, c * fc) == pytest.approx(base, rel=1e-12)


class TestPinball:
    def test_exact_forecast(self):
        assert pinball(7.0, 7.0, 0.25) == 0.0

    def test_under_forecast(self):
        assert pinball(10.0, 8.0, 0.75) == pytest.approx(1.5, abs=1e-15)

    def test_over_forecast(self):
        assert pinball(8.0, 10.0, 0.75) == pytest.approx(0.5, abs=1e-15)

    def test_complement_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            y, q = rng.uniform(0, 10, 2)
            u = rng.uniform(0.01, 0.99)
            assert pinball(y, q, u) + pinball(y, q, 1 - u) == pytest.approx(abs(y - q), rel=1e-12)

    def test_invalid_level(self):
        with pytest.raises(ValidationError):
            pinball(1.0, 1.0, 1.0)


class TestSpl:
    def test_perfect_quantile_path(self):
        assert spl([0, 2, 0, 2], [2, 1], [2, 1], 0.75) == 0.0

    def test_direct_formula_case(self):
        assert spl([0, 2, 0, 2], [2], [1], 0.5) == pytest.approx(0.25, abs=1e-15)

    def test_scale_invariance_doubling(self):
        hist = [0, 2, 0, 2, 3]
        actual = [2.0, 4.0]
        q = [1.0, 5.0]
        base = spl(hist, actual, q, 0.165)
        doubled = spl([2 * h for h in hist], [2 * a for a in actual], [2 * v for v in q], 0.165)
        assert doubled == pytest.approx(base, rel=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            hist = rng.poisson(2.0, 30).astype(float)
            if len(trim_leading_zeros(hist)) < 2 or np.all(np.diff(trim_leading_zeros(hist)) == 0):
                continue
            actual = rng.poisson(2.0, 9).astype(float)
            q = rng.uniform(0, 5, 9)
            u = float(rng.choice(QUANTILE_LEVELS))
            assert spl(hist, actual, q, u) == pytest.approx(
                oracle_spl(hist, actual, q, u), rel=1e-12)


def build_level_data(panel, index, train_end, h, forecast_fn, rng):
    """Per-level (keys, history, actual, forecast) built straight off the panel."""
    per_level = {}
    hist12 = panel.sales_values[:, :train_end]
    act12 = panel.sales_values[:, train_end:train_end + h]
    fc12 = forecast_fn(act12, rng)
    for lvl in range(1, 13):
        keys, hist = aggregate(hist12, index, lvl)
        _, act = aggregate(act12, index, lvl)
        _, fc = aggregate(fc12, index, lvl)
        per_level[lvl] = (keys, hist, act, fc)
    return per_level


class TestWeightedTotals:
    def test_all_rmsse_one_gives_one(self, toy_panel):
        index = build_hierarchy(toy_panel)
        w = compute_weights(toy_panel, index, last_day=toy_panel.n_days)
        values = {(lvl, key): 1.0 for lvl in range(1, 13) for key in index.keys[lvl]}
        assert wrmsse(values, w) == pytest.approx(1.0, abs=1e-12)

    def test_all_spl_one_gives_one(self, toy_panel):
        index = build_hierarchy(toy_panel)
        w = compute_weights(toy_panel, index, last_day=toy_panel.n_days)
        values = {(lvl, key): np.ones(9) for lvl in range(1, 13) for key in index.keys[lvl]}
        assert wspl(values, w) == pytest.approx(1.0, abs=1e-12)

    def test_missing_series_rejected(self, toy_panel):
        index = build_hierarchy(toy_panel)
        w = compute_weights(toy_panel, index, last_day=toy_panel.n_days)
        with pytest.raises(ValidationError, match="no RMSSE"):
            wrmsse({}, w)

    def test_missing_quantile_rejected(self, toy_panel):
        index = build_hierarchy(toy_panel)
        w = compute_weights(toy_panel, index, last_day=toy_panel.n_days)
        values = {(lvl, key): np.ones(8) for lvl in range(1, 13) for key in index.keys[lvl]}
        with pytest.raises(ValidationError, match="quantile"):
            wspl(values, w)

    def test_wrmsse_matches_two_loop_oracle(self, toy_panel):
        index = build_hierarchy(toy_panel)
        train_end = toy_panel.n_days - 28
        w = compute_weights(toy_panel, index, last_day=train_end)
        rng = np.random.default_rng(7)
        per_level = build_level_data(
            toy_panel, index, train_end, 28,
            lambda act, r: np.maximum(act + r.normal(0, 1, act.shape), 0.0), rng)
        report = evaluate_point(per_level, w)

        # independent two-loop oracle over every level and series
        total = 0.0
        for lvl in range(1, 13):
            keys, hist, act, fc = per_level[lvl]
            for i, key in enumerate(keys):
                total += w[(lvl, key)] * oracle_rmsse(hist[i], act[i], fc[i])
        assert report.total == pytest.approx(total, abs=1e-12)

    def test_wspl_matches_three_loop_oracle(self, toy_panel):
        index = build_hierarchy(toy_panel)
        train_end = toy_panel.n_days - 28
        w = compute_weights(toy_panel, index, last_day=train_end)
        rng = np.random.default_rng(8)
        per_level = {}
        hist12 = toy_panel.sales_values[:, :train_end]
        act12 = toy_panel.sales_values[:, train_end:]
        for lvl in range(1, 13):
            keys, hist = aggregate(hist12, index, lvl)
            _, act = aggregate(act12, index, lvl)
            med = np.maximum(act + rng.normal(0, 1, act.shape), 0.1)
            qf = med[:, :, None] * np.linspace(0.5, 1.5, 9)[None, None, :]
            per_level[lvl] = (keys, hist, act, qf)
        report = evaluate_quantiles(per_level, w)

        total = 0.0
        for lvl in range(1, 13):
            keys, hist, act, qf = per_level[lvl]
            for i, key in enumerate(keys):
                per_q = [oracle_spl(hist[i], act[i], qf[i, :, j], u)
                         for j, u in enumerate(QUANTILE_LEVELS)]
                total += w[(lvl, key)] * (sum(per_q) / 9)
        assert report.total == pytest.approx(total, abs=1e-12)

    def test_permutation_invariance(self, toy_panel):
        index = build_hierarchy(toy_panel)
        w = compute_weights(toy_panel, index, last_day=toy_panel.n_days)
        rng = np.random.default_rng(9)
        values = {(lvl, key): float(rng.uniform(0.2, 2.0))
                  for lvl in range(1, 13) for key in index.keys[lvl]}
        shuffled = dict(reversed(list(values.items())))
        assert wrmsse(values, w) == wrmsse(shuffled, w)


class TestDegenerateExclusion:
    def test_degenerate_series_excluded_with_zero_weight(self, toy_panel):
        index = build_hierarchy(toy_panel)
        train_end = toy_panel.n_days - 28
        w = compute_weights(toy_panel, index, last_day=train_end)
        rng = np.random.default_rng(10)
        per_level = build_level_data(toy_panel, index, train_end, 28,
                                     lambda act, r: act.copy(), rng)
        # make one level-12 history constant so its denominator degenerates
        keys, hist, act, fc = per_level[12]
        hist = hist.copy()
        hist[0, :] = 3.0
        per_level[12] = (keys, hist, act, fc)
        report = evaluate_point(per_level, w)
        assert (12, keys[0]) in report.excluded
        assert np.isfinite(report.total)


class TestScoreReport:
    def test_report_layout_and_level_rows(self, toy_panel):
        index = build_hierarchy(toy_panel)
        train_end = toy_panel.n_days - 28
        w = compute_weights(toy_panel, index, last_day=train_end)
        rng = np.random.default_rng(11)
        per_level = build_level_data(
            toy_panel, index, train_end, 28,
            lambda act, r: np.maximum(act + r.normal(0, 1, act.shape), 0.0), rng)
        report = evaluate_point(per_level, w)
        frame = report.to_frame()
        assert set(frame.columns) == {"level", "series_id", "metric", "value"}
        assert (frame["metric"] == "wrmsse").sum() == 1
        assert (frame["metric"] == "wrmsse_level").sum() == 12
        # total equals the mean of the twelve level rows
        level_vals = frame.loc[frame["metric"] == "wrmsse_level", "value"].to_numpy()
        assert report.total == pytest.approx(level_vals.mean(), abs=1e-12)
