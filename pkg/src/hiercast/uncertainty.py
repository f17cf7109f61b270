"""Probabilistic forecasts: per-level quantile factors plus empirical corrections.

The median point forecast of each hierarchy level is multiplied by a per-level,
per-quantile factor to produce the remaining eight quantiles. Factors can be
loaded from file (a reference full-scale table ships with the package) or
fitted by minimizing the weighted scaled pinball loss on a validation split,
one 1-D search per (level, quantile) slice. The two most disaggregated levels
are afterwards blended with empirical sales quantiles over trailing windows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import PanelDataset
from .errors import DegenerateSeriesError, ValidationError
from .hierarchy import HierarchyIndex, N_LEVELS, WeightTable, aggregate
from .metrics import QUANTILE_LEVELS, abs_scale_denominator
from .validation import require

logger = logging.getLogger(__name__)

MEDIAN_POS = QUANTILE_LEVELS.index(0.5)
NON_MEDIAN = [j for j in range(len(QUANTILE_LEVELS)) if j != MEDIAN_POS]
EXTRA_CANDIDATES = (1.0, 1.02, 1.03)
FACTOR_SEARCH_HI = 8.0
DAILY_LONG_WINDOW = 13 * 28
DAILY_SHORT_WINDOW = 28
WEEKLY_LONG_WINDOW = 13 * 28
WEEKLY_SHORT_WINDOW = 3 * 28

# reference factors for the full-scale configuration, one row per level,
# columns in QUANTILE_LEVELS order
REFERENCE_FACTOR_ROWS = np.array([
    [0.890, 0.922, 0.963, 0.973, 1.000, 1.027, 1.037, 1.078, 1.143],
    [0.869, 0.907, 0.956, 0.969, 1.000, 1.031, 1.043, 1.093, 1.166],
    [0.848, 0.893, 0.950, 0.964, 1.000, 1.036, 1.049, 1.107, 1.186],
    [0.869, 0.907, 0.951, 0.969, 1.000, 1.031, 1.043, 1.093, 1.166],
    [0.827, 0.878, 0.943, 0.960, 1.000, 1.040, 1.057, 1.123, 1.209],
    [0.827, 0.878, 0.943, 0.960, 1.000, 1.040, 1.057, 1.123, 1.209],
    [0.787, 0.850, 0.930, 0.951, 1.000, 1.048, 1.070, 1.150, 1.251],
    [0.767, 0.835, 0.924, 0.947, 1.000, 1.053, 1.076, 1.166, 1.272],
    [0.707, 0.793, 0.905, 0.934, 1.000, 1.066, 1.095, 1.208, 1.335],
    [0.249, 0.416, 0.707, 0.795, 1.000, 1.218, 1.323, 1.720, 2.041],
    [0.111, 0.254, 0.590, 0.708, 1.000, 1.336, 1.504, 2.158, 2.662],
    [0.005, 0.055, 0.295, 0.446, 1.000, 1.884, 2.328, 3.548, 4.066],
])


@dataclass
class QuantileFactorTable:
    """12 x 9 multiplicative factors plus a per-level extra multiplier on the
    top quantile (right-skew allowance)."""

    factors: np.ndarray
    extra_last: np.ndarray

    def __post_init__(self):
        self.factors = np.asarray(self.factors, dtype=np.float64)
        self.extra_last = np.asarray(self.extra_last, dtype=np.float64)
        require(self.factors.shape == (N_LEVELS, len(QUANTILE_LEVELS)),
                f"factor table must be {N_LEVELS} x {len(QUANTILE_LEVELS)}")
        require(self.extra_last.shape == (N_LEVELS,), "one extra multiplier per level")
        if not np.allclose(self.factors[:, MEDIAN_POS], 1.0, atol=1e-12):
            raise ValidationError("the median factor must be exactly 1.0 on every level")
        if (np.diff(self.factors, axis=1) < -1e-12).any():
            raise ValidationError("factors must be non-decreasing across quantile levels")
        require((self.extra_last >= 1.0).all(), "extra multipliers must be >= 1")

    def factor(self, level: int, u: float) -> float:
        j = QUANTILE_LEVELS.index(u)
        f = self.factors[level - 1, j]
        if j == len(QUANTILE_LEVELS) - 1:
            f = f * self.extra_last[level - 1]
        return float(f)

    @classmethod
    def identity(cls) -> "QuantileFactorTable":
        return cls(np.ones((N_LEVELS, len(QUANTILE_LEVELS))), np.ones(N_LEVELS))

    @classmethod
    def reference(cls) -> "QuantileFactorTable":
        """The published full-scale factor table, extra multipliers at 1.0."""
        return cls(REFERENCE_FACTOR_ROWS.copy(), np.ones(N_LEVELS))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.factors, columns=[f"f{u}" for u in QUANTILE_LEVELS])
        frame.insert(0, "level", np.arange(1, N_LEVELS + 1))
        frame["extra_multiplier"] = self.extra_last
        return frame

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "QuantileFactorTable":
        frame = pd.read_csv(path, float_precision="round_trip").sort_values("level")
        require(len(frame) == N_LEVELS, f"factor file must have {N_LEVELS} level rows")
        cols = [f"f{u}" for u in QUANTILE_LEVELS]
        return cls(frame[cols].to_numpy(), frame["extra_multiplier"].to_numpy())


@dataclass
class QuantileGrid:
    """Per-series, per-day, per-quantile forecasts for one level."""

    level: int
    keys: list[str]
    start_day: int
    values: np.ndarray      # (n_series, horizon, 9)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        require(self.values.ndim == 3 and self.values.shape[0] == len(self.keys)
                and self.values.shape[2] == len(QUANTILE_LEVELS),
                "quantile grid must be (n_series, horizon, 9)")
        require(np.isfinite(self.values).all(), "quantile grid contains non-finite values")
        require((self.values >= -1e-12).all(), "quantile grid contains negative values")
        if (np.diff(self.values, axis=2) < -1e-9).any():
            raise ValidationError("quantile grid is not non-decreasing across levels u")

    @property
    def horizon(self) -> int:
        return self.values.shape[1]


def apply_factors(median_grids: dict, table: QuantileFactorTable) -> dict[int, QuantileGrid]:
    """Multiply each level's median grid by its factor row.

    ``median_grids`` maps level -> ForecastGrid (the aggregated point
    forecast); the top quantile also gets the level's extra multiplier.
    """
    out = {}
    for level in range(1, N_LEVELS + 1):
        require(level in median_grids, f"apply_factors: missing median grid for level {level}")
        grid = median_grids[level]
        row = table.factors[level - 1].copy()
        row[-1] *= table.extra_last[level - 1]
        values = grid.values[:, :, None] * row[None, None, :]
        out[level] = QuantileGrid(level, grid.keys, grid.start_day, values)
    return out


# ---------------------------------------------------------------------------
# Factor fitting
# ---------------------------------------------------------------------------

def golden_section(fn, lo: float, hi: float, tol: float = 1e-4) -> float:
    """Argmin of a unimodal function on [lo, hi] to within tol."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def _monotone_non_decreasing(values: np.ndarray) -> np.ndarray:
    """Isotonic (least-squares) projection onto non-decreasing sequences (PAVA)."""
    blocks = [[v, 1.0] for v in values]
    merged: list[list[float]] = []
    for blk in blocks:
        merged.append(blk)
        while len(merged) > 1 and merged[-2][0] > merged[-1][0] - 1e-15:
            v2, w2 = merged.pop()
            v1, w1 = merged.pop()
            merged.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2])
    out = []
    for v, w in merged:
        out.extend([v] * int(round(w)))
    return np.asarray(out)


class _LevelSlice:
    """Cached arrays for one level of the fitting split."""

    def __init__(self, medians, actuals, weights_vec, denominators):
        self.medians = medians
        self.actuals = actuals
        self.w_over_den = weights_vec / denominators
        self.h = actuals.shape[1]

    def loss(self, u: float, factor: float) -> float:
        diff = self.actuals - factor * self.medians
        pin = np.where(diff >= 0, u * diff, (u - 1.0) * diff)
        return float(np.sum(self.w_over_den * pin.mean(axis=1)) / len(QUANTILE_LEVELS))

    def table_loss(self, factor_row: np.ndarray, extra: float) -> float:
        total = 0.0
        for j, u in enumerate(QUANTILE_LEVELS):
            f = factor_row[j] * (extra if j == len(QUANTILE_LEVELS) - 1 else 1.0)
            total += self.loss(u, f)
        return total


def optimize_factors(median_grids: dict, actuals: dict, histories: dict,
                     weights: WeightTable, symmetric_levels=tuple(range(1, 10)),
                     extra_candidates=EXTRA_CANDIDATES, tol: float = 1e-4,
                     trim_leading: bool = True) -> QuantileFactorTable:
    """Fit the factor table on one validation split by WSPL minimization.

    Every (level, quantile) factor is an independent golden-section search on
    that slice's weighted scaled pinball loss. On ``symmetric_levels`` the
    mirrored quantile pairs (u, 1-u) share one spread parameter s, fitted
    jointly as factors (1-s, 1+s); the remaining levels fit each side freely
    (skew allowed). Fitted rows are isotonically projected to be monotone and
    the top quantile picks its extra multiplier from ``extra_candidates`` by
    direct comparison. If the fitted table somehow scores worse than the
    identity table on the split, the identity table is returned with a warning.
    """
    slices: dict[int, _LevelSlice | None] = {}
    for level in range(1, N_LEVELS + 1):
        require(level in median_grids and level in actuals and level in histories,
                f"optimize_factors: missing inputs for level {level}")
        grid = median_grids[level]
        act = np.asarray(actuals[level], dtype=np.float64)
        hist = np.asarray(histories[level], dtype=np.float64)
        require(act.shape == grid.values.shape, f"level {level}: actuals shape mismatch")
        w = np.array([weights[(level, k)] for k in grid.keys])
        den = np.ones(len(grid.keys))
        for i in range(len(grid.keys)):
            try:
                den[i] = abs_scale_denominator(hist[i], trim_leading)
            except DegenerateSeriesError:
                w[i] = 0.0
        if act.sum() <= 0 or w.sum() <= 0:
            logger.warning("level %d: degenerate fitting slice (zero actuals or weights); "
                           "using identity factors", level)
            slices[level] = None
            continue
        slices[level] = _LevelSlice(grid.values, act, w, den)

    factors = np.ones((N_LEVELS, len(QUANTILE_LEVELS)))
    extra = np.ones(N_LEVELS)
    for level in range(1, N_LEVELS + 1):
        sl = slices[level]
        if sl is None:
            continue
        row = np.ones(len(QUANTILE_LEVELS))
        if level in symmetric_levels:
            for j_lo in range(MEDIAN_POS):
                j_hi = len(QUANTILE_LEVELS) - 1 - j_lo
                u_lo, u_hi = QUANTILE_LEVELS[j_lo], QUANTILE_LEVELS[j_hi]

                def pair_loss(s):
                    return sl.loss(u_lo, 1.0 - s) + sl.loss(u_hi, 1.0 + s)

                s_best = golden_section(pair_loss, 0.0, 1.0, tol)
                if pair_loss(s_best) <= pair_loss(0.0):
                    row[j_lo], row[j_hi] = 1.0 - s_best, 1.0 + s_best
        else:
            for j in NON_MEDIAN:
                u = QUANTILE_LEVELS[j]
                f_best = golden_section(lambda f: sl.loss(u, f), 0.0, FACTOR_SEARCH_HI, tol)
                if sl.loss(u, f_best) <= sl.loss(u, 1.0):
                    row[j] = f_best
        # monotone projection per side, pinned at the unit median factor
        row[:MEDIAN_POS] = np.minimum(_monotone_non_decreasing(row[:MEDIAN_POS]), 1.0)
        row[MEDIAN_POS + 1:] = np.maximum(
            _monotone_non_decreasing(row[MEDIAN_POS + 1:]), 1.0)
        factors[level - 1] = row

        u_top = QUANTILE_LEVELS[-1]
        top_losses = [sl.loss(u_top, row[-1] * c) for c in extra_candidates]
        extra[level - 1] = extra_candidates[int(np.argmin(top_losses))]

    fitted = QuantileFactorTable(factors, extra)
    fitted_loss = sum(sl.table_loss(fitted.factors[lvl - 1], fitted.extra_last[lvl - 1])
                      for lvl, sl in slices.items() if sl is not None)
    identity = QuantileFactorTable.identity()
    identity_loss = sum(sl.table_loss(identity.factors[lvl - 1], 1.0)
                        for lvl, sl in slices.items() if sl is not None)
    if fitted_loss > identity_loss + 1e-15:
        logger.warning("fitted factor table scored worse than identity (%.6g > %.6g); "
                       "keeping identity", fitted_loss, identity_loss)
        return identity
    logger.info("factor fit: split WSPL contribution %.6g (identity %.6g)",
                fitted_loss, identity_loss)
    return fitted


# ---------------------------------------------------------------------------
# Statistical corrections for levels 11 and 12
# ---------------------------------------------------------------------------

@dataclass
class StatQuantiles:
    """Empirical sales quantiles per level-12 series at the 8 non-median levels."""

    values: np.ndarray          # (n_series, 8)
    window: int
    weekly: bool


def statistical_quantiles(panel: PanelDataset, window: int, weekly: bool = False,
                          end_day: int | None = None) -> StatQuantiles:
    """Empirical quantiles of daily sales (or of 7-day sums scaled back to
    per-day units) over the trailing ``window`` days ending at ``end_day``.

    Windows longer than the available history shrink with a warning. Linear
    interpolation between order statistics.
    """
    end = panel.n_days if end_day is None else int(end_day)
    require(1 <= end <= panel.n_days, f"end_day {end} outside panel range")
    win = int(window)
    require(win >= 1, "window must be positive")
    if win > end:
        logger.warning("statistical window %d longer than available history %d; shrinking",
                       win, end)
        win = end
    levels = [QUANTILE_LEVELS[j] for j in NON_MEDIAN]
    if not weekly:
        vals = panel.sales_values[:, end - win:end]
        q = np.quantile(vals, levels, axis=1, method="linear").T
        return StatQuantiles(q, win, False)
    n_weeks = win // 7
    require(n_weeks >= 1, "weekly quantiles need a window of at least 7 days")
    tail = panel.sales_values[:, end - n_weeks * 7:end]
    weeks = tail.reshape(panel.n_series_level12, n_weeks, 7).sum(axis=2) / 7.0
    q = np.quantile(weeks, levels, axis=1, method="linear").T
    return StatQuantiles(q, win, True)


def aggregate_stat_quantiles(stats: StatQuantiles, index: HierarchyIndex,
                             level: int) -> np.ndarray:
    """Member-sum aggregation of level-12 stat quantiles (a deliberate
    approximation: quantiles of sums are not sums of quantiles)."""
    _, agg = aggregate(stats.values, index, level)
    return agg


def _blend_and_restore(est: QuantileGrid, corrected_non_median: np.ndarray) -> QuantileGrid:
    """Write corrected non-median values, keep the median untouched, and restore
    per-cell monotonicity by sorting each side and clipping at the median."""
    values = est.values.copy()
    values[:, :, NON_MEDIAN] = corrected_non_median
    med = values[:, :, MEDIAN_POS]
    lows = np.sort(values[:, :, :MEDIAN_POS], axis=2)
    highs = np.sort(values[:, :, MEDIAN_POS + 1:], axis=2)
    values[:, :, :MEDIAN_POS] = np.minimum(lows, med[:, :, None])
    values[:, :, MEDIAN_POS + 1:] = np.maximum(highs, med[:, :, None])
    values = np.maximum(values, 0.0)
    return QuantileGrid(est.level, est.keys, est.start_day, values)


def _daily_mix(long: np.ndarray, short: np.ndarray) -> np.ndarray:
    return (long + 1.75 * short) / 2.75


def correct_level12(est: QuantileGrid, daily_long: StatQuantiles, daily_short: StatQuantiles,
                    weekly_long: StatQuantiles, weekly_short: StatQuantiles) -> QuantileGrid:
    """0.2 estimate + 0.7 daily-stat mix + 0.1 weekly-stat mix, per non-median cell."""
    require(est.level == 12, "correct_level12 expects the level-12 grid")
    for s, wk in ((daily_long, False), (daily_short, False),
                  (weekly_long, True), (weekly_short, True)):
        require(s.values.shape == (len(est.keys), len(NON_MEDIAN)),
                "stat quantiles misshapen for level 12")
        require(s.weekly == wk, "daily/weekly stat windows swapped")
    daily = _daily_mix(daily_long.values, daily_short.values)
    weekly = (weekly_long.values + weekly_short.values) / 2.0
    base = est.values[:, :, NON_MEDIAN]
    corrected = 0.2 * base + 0.7 * daily[:, None, :] + 0.1 * weekly[:, None, :]
    return _blend_and_restore(est, corrected)


def correct_level11(est: QuantileGrid, daily_long: np.ndarray,
                    daily_short: np.ndarray) -> QuantileGrid:
    """0.91 estimate + 0.09 daily-stat mix; stats arrive already at level 11."""
    require(est.level == 11, "correct_level11 expects the level-11 grid")
    for s in (daily_long, daily_short):
        require(np.asarray(s).shape == (len(est.keys), len(NON_MEDIAN)),
                "stat quantiles misshapen for level 11")
    daily = _daily_mix(np.asarray(daily_long), np.asarray(daily_short))
    base = est.values[:, :, NON_MEDIAN]
    corrected = 0.91 * base + 0.09 * daily[:, None, :]
    return _blend_and_restore(est, corrected)


def assemble_submission(grids: dict[int, QuantileGrid]) -> pd.DataFrame:
    """Rows keyed (level, series_id, quantile) with columns F1..F28."""
    rows = []
    for level in range(1, N_LEVELS + 1):
        require(level in grids, f"assemble_submission: missing level {level}")
        grid = grids[level]
        for i, key in enumerate(grid.keys):
            for j, u in enumerate(QUANTILE_LEVELS):
                rows.append((level, key, u, *grid.values[i, :, j]))
    h = grids[1].horizon
    columns = ["level", "series_id", "quantile"] + [f"F{t}" for t in range(1, h + 1)]
    return pd.DataFrame(rows, columns=columns)
