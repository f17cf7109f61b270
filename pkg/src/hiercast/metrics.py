"""Scaled point and quantile forecast metrics.

RMSSE scales squared forecast error by the mean squared one-step difference of
the training history; SPL scales pinball loss by the mean absolute one-step
difference. Weighted totals sum per-series values against the dollar-sales
weight table. All reductions run in serial deterministic order so scores are
bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import DegenerateSeriesError, ValidationError
from .hierarchy import WeightTable
from .validation import require

logger = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.005, 0.025, 0.165, 0.25, 0.5, 0.75, 0.835, 0.975, 0.995)


def trim_leading_zeros(y: np.ndarray) -> np.ndarray:
    """History before the first nonzero observation is dropped (not-yet-active products)."""
    y = np.asarray(y, dtype=np.float64)
    nz = np.flatnonzero(y != 0)
    if len(nz) == 0:
        return y[:0]
    return y[nz[0]:]


def _denominator(y: np.ndarray, power: int, trim: bool) -> float:
    y = trim_leading_zeros(y) if trim else np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise DegenerateSeriesError(
            f"history has {n} observation(s) after leading-zero trimming; need at least 2")
    diffs = np.abs(np.diff(y)) ** power
    den = float(diffs.sum() / (n - 1))
    if den <= 0.0:
        raise DegenerateSeriesError("constant history: scale denominator is zero")
    return den


def scale_denominator(history, trim_leading: bool = True) -> float:
    """Mean squared one-step difference of the (trimmed) history: (1/(n-1)) sum (y_t - y_{t-1})^2."""
    return _denominator(history, 2, trim_leading)


def abs_scale_denominator(history, trim_leading: bool = True) -> float:
    """Mean absolute one-step difference, the SPL scale."""
    return _denominator(history, 1, trim_leading)


def rmsse(history, actual, forecast, trim_leading: bool = True) -> float:
    actual = np.asarray(actual, dtype=np.float64)
    forecast = np.asarray(forecast, dtype=np.float64)
    require(actual.shape == forecast.shape and actual.ndim == 1 and len(actual) >= 1,
            "rmsse: actual and forecast must be equal-length 1-D arrays")
    den = scale_denominator(history, trim_leading)
    mse = float(np.mean((actual - forecast) ** 2))
    return float(np.sqrt(mse / den))


def pinball(actual: float, q_forecast: float, u: float) -> float:
    require(0.0 < u < 1.0, f"quantile level must be in (0, 1), got {u}")
    if q_forecast <= actual:
        return u * (actual - q_forecast)
    return (1.0 - u) * (q_forecast - actual)


def spl(history, actual, q_forecast, u: float, trim_leading: bool = True) -> float:
    """Scaled pinball loss of one series' quantile-u path over the horizon."""
    require(0.0 < u < 1.0, f"quantile level must be in (0, 1), got {u}")
    actual = np.asarray(actual, dtype=np.float64)
    q_forecast = np.asarray(q_forecast, dtype=np.float64)
    require(actual.shape == q_forecast.shape and actual.ndim == 1 and len(actual) >= 1,
            "spl: actual and quantile forecast must be equal-length 1-D arrays")
    den = abs_scale_denominator(history, trim_leading)
    diff = actual - q_forecast
    losses = np.where(diff >= 0, u * diff, (u - 1.0) * diff)
    return float(np.mean(losses) / den)


def wrmsse(values: Mapping[tuple[int, str], float], weights: WeightTable) -> float:
    """Weighted sum of per-series RMSSE over all levels.

    Entries whose weight is exactly 0 (degenerate-series exclusions) need no
    value; any other weighted series without a value is an error.
    """
    total = 0.0
    for key, w in weights.values.items():
        if w == 0.0:
            continue
        if key not in values:
            raise ValidationError(f"wrmsse: no RMSSE value for weighted series {key}")
        total += w * values[key]
    return float(total)


def wspl(values: Mapping[tuple[int, str], np.ndarray], weights: WeightTable) -> float:
    """Weighted mean-over-quantiles sum of per-series SPL over all levels."""
    total = 0.0
    for key, w in weights.values.items():
        if w == 0.0:
            continue
        if key not in values:
            raise ValidationError(f"wspl: no SPL values for weighted series {key}")
        series_vals = np.asarray(values[key], dtype=np.float64)
        if series_vals.shape != (len(QUANTILE_LEVELS),) or np.isnan(series_vals).any():
            raise ValidationError(
                f"wspl: series {key} must supply all {len(QUANTILE_LEVELS)} quantile SPLs")
        total += w * float(series_vals.mean())
    return float(total)


# ---------------------------------------------------------------------------
# Scoring harness: batch evaluation with degenerate-series exclusion and the
# (level, series_id, metric, value) report layout.
# ---------------------------------------------------------------------------

@dataclass
class ScoreReport:
    """Per-series metric values plus per-level and total summary rows."""

    metric: str
    per_series: pd.DataFrame        # level, series_id, metric, value
    per_level: pd.DataFrame         # level, value (level weighted mean x 12)
    total: float
    excluded: list[tuple[int, str]]

    def to_frame(self) -> pd.DataFrame:
        level_rows = pd.DataFrame({
            "level": self.per_level["level"],
            "series_id": "ALL",
            "metric": f"{self.metric}_level",
            "value": self.per_level["value"],
        })
        total_row = pd.DataFrame(
            {"level": [0], "series_id": ["ALL"], "metric": [self.metric], "value": [self.total]})
        return pd.concat([self.per_series, level_rows, total_row], ignore_index=True)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    def level_value(self, level: int) -> float:
        sel = self.per_level.loc[self.per_level["level"] == level, "value"]
        require(len(sel) == 1, f"no level {level} in report")
        return float(sel.iloc[0])


def _per_series_metric(per_level, weights, trim_leading, one_series):
    values: dict[tuple[int, str], object] = {}
    rows = []
    excluded: list[tuple[int, str]] = []
    for level in sorted(per_level):
        keys = per_level[level][0]
        for i, key in enumerate(keys):
            try:
                val = one_series(level, i)
            except DegenerateSeriesError:
                excluded.append((level, key))
                continue
            values[(level, key)] = val
            scalar = float(np.mean(val)) if np.ndim(val) else float(val)
            rows.append((level, key, scalar))
    if excluded:
        logger.warning("excluded %d degenerate series from scoring (weight forced to 0): %s",
                       len(excluded), excluded[:5])
    eff_weights = weights.zeroed(excluded) if excluded else weights
    return values, rows, excluded, eff_weights


def _level_breakdown(rows, eff_weights, metric):
    frame = pd.DataFrame(rows, columns=["level", "series_id", "value"])
    frame.insert(2, "metric", metric)
    level_vals = []
    for level in sorted(frame["level"].unique()):
        sub = frame[frame["level"] == level]
        contrib = sum(eff_weights.values.get((level, r.series_id), 0.0) * r.value
                      for r in sub.itertuples())
        level_vals.append((level, 12.0 * contrib))
    per_level = pd.DataFrame(level_vals, columns=["level", "value"])
    return frame[["level", "series_id", "metric", "value"]], per_level


def evaluate_point(per_level: dict[int, tuple[list[str], np.ndarray, np.ndarray, np.ndarray]],
                   weights: WeightTable, trim_leading: bool = True) -> ScoreReport:
    """WRMSSE over pre-aggregated per-level (keys, history, actual, forecast) arrays.

    Degenerate series are dropped with their weight forced to 0 and a logged
    warning; everything else follows the exact per-series formulas.
    """
    def one(level, i):
        keys, hist, act, fc = per_level[level]
        return rmsse(hist[i], act[i], fc[i], trim_leading)

    values, rows, excluded, eff = _per_series_metric(per_level, weights, trim_leading, one)
    total = wrmsse(values, eff)
    per_series, level_frame = _level_breakdown(rows, eff, "rmsse")
    return ScoreReport("wrmsse", per_series, level_frame, total, excluded)


def evaluate_quantiles(per_level: dict[int, tuple[list[str], np.ndarray, np.ndarray, np.ndarray]],
                       weights: WeightTable, trim_leading: bool = True) -> ScoreReport:
    """WSPL over per-level (keys, history, actual, quantile forecast (n, h, 9)) arrays."""
    def one(level, i):
        keys, hist, act, qf = per_level[level]
        return np.array([spl(hist[i], act[i], qf[i, :, j], u, trim_leading)
                         for j, u in enumerate(QUANTILE_LEVELS)])

    values, rows, excluded, eff = _per_series_metric(per_level, weights, trim_leading, one)
    total = wspl(values, eff)
    per_series, level_frame = _level_breakdown(rows, eff, "spl_mean")
    return ScoreReport("wspl", per_series, level_frame, total, excluded)
