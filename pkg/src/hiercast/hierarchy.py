"""The 12-level aggregation scheme and per-series dollar-sales weights.

Every level is a grouping of the 30,490-at-full-scale (item, store) series;
higher-level values are plain sums of member series. Weights are proportional
to dollar sales over the trailing 28 days of the training range and are
normalized so each level sums to 1/12 (grand total 1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import PanelDataset
from .errors import ValidationError
from .validation import require

logger = logging.getLogger(__name__)

WEIGHT_WINDOW = 28
N_LEVELS = 12


@dataclass(frozen=True)
class LevelSpec:
    level: int
    key_fields: tuple[str, ...]   # subset of the series id columns, in key order
    full_scale_count: int


LEVEL_SPECS: tuple[LevelSpec, ...] = (
    LevelSpec(1, (), 1),
    LevelSpec(2, ("state_id",), 3),
    LevelSpec(3, ("store_id",), 10),
    LevelSpec(4, ("cat_id",), 3),
    LevelSpec(5, ("dept_id",), 7),
    LevelSpec(6, ("state_id", "cat_id"), 9),
    LevelSpec(7, ("state_id", "dept_id"), 21),
    LevelSpec(8, ("store_id", "cat_id"), 30),
    LevelSpec(9, ("store_id", "dept_id"), 70),
    LevelSpec(10, ("item_id",), 3049),
    LevelSpec(11, ("item_id", "state_id"), 9147),
    LevelSpec(12, ("item_id", "store_id"), 30490),
)

TOTAL_KEY = "Total"


@dataclass
class HierarchyIndex:
    """Materialized aggregation structure.

    For each level: the sorted aggregate keys, and for each level-12 series the
    ordinal of the aggregate it belongs to. Member lists therefore partition
    the level-12 series exactly once per level.
    """

    series_keys: list[str]
    keys: dict[int, list[str]]           # level -> sorted aggregate keys
    group_of: dict[int, np.ndarray]      # level -> (n12,) aggregate ordinal per series

    @property
    def total_series(self) -> int:
        return sum(len(k) for k in self.keys.values())

    def members(self, level: int, key: str) -> np.ndarray:
        """Indices (into series_keys) of the level-12 members of an aggregate."""
        try:
            g = self.keys[level].index(key)
        except ValueError:
            raise ValidationError(f"level {level} has no series {key!r}")
        return np.flatnonzero(self.group_of[level] == g)

    def level_count(self, level: int) -> int:
        return len(self.keys[level])


def build_hierarchy(panel: PanelDataset) -> HierarchyIndex:
    """Group the panel's level-12 series into all 12 aggregation levels."""
    series = panel.series
    require(len(series) > 0, "cannot build a hierarchy from an empty panel")

    keys: dict[int, list[str]] = {}
    group_of: dict[int, np.ndarray] = {}
    for spec in LEVEL_SPECS:
        if not spec.key_fields:
            labels = pd.Series([TOTAL_KEY] * len(series))
        else:
            labels = series[spec.key_fields[0]].astype(str)
            for f in spec.key_fields[1:]:
                labels = labels + "_" + series[f].astype(str)
        cats = sorted(labels.unique())
        lookup = {k: i for i, k in enumerate(cats)}
        keys[spec.level] = cats
        group_of[spec.level] = labels.map(lookup).to_numpy(dtype=np.int64)

    index = HierarchyIndex(series_keys=panel.series_keys, keys=keys, group_of=group_of)
    logger.info("hierarchy: %d total series across %d levels", index.total_series, N_LEVELS)
    return index


def aggregate(values: np.ndarray, index: HierarchyIndex, level: int) -> tuple[list[str], np.ndarray]:
    """Sum a (n_series_level12, h) matrix up to the requested level.

    Returns (aggregate keys, (n_level, h) matrix). Level 12 is the identity up
    to the canonical series ordering.
    """
    require(1 <= level <= N_LEVELS, f"level must be 1..12, got {level}")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != len(index.series_keys):
        raise ValidationError(
            f"aggregate: expected values for all {len(index.series_keys)} level-12 series, "
            f"got {values.shape[0]} rows")
    group = index.group_of[level]
    out = np.zeros((len(index.keys[level]), values.shape[1]))
    np.add.at(out, group, values)
    return index.keys[level], out


@dataclass
class WeightTable:
    """Map (level, series key) -> weight. Each level sums to 1/12."""

    values: dict[tuple[int, str], float]

    def __getitem__(self, key: tuple[int, str]) -> float:
        return self.values[key]

    def __contains__(self, key: tuple[int, str]) -> bool:
        return key in self.values

    def total(self) -> float:
        return float(sum(self.values.values()))

    def level_sum(self, level: int) -> float:
        return float(sum(w for (lvl, _), w in self.values.items() if lvl == level))

    def zeroed(self, keys) -> "WeightTable":
        """Copy with the given (level, key) entries forced to weight 0
        (degenerate-series exclusion; no renormalization)."""
        out = dict(self.values)
        for k in keys:
            if k in out:
                out[k] = 0.0
        return WeightTable(out)

    def to_frame(self) -> pd.DataFrame:
        rows = [(lvl, key, w) for (lvl, key), w in self.values.items()]
        return pd.DataFrame(rows, columns=["level", "series_id", "weight"])

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "WeightTable":
        frame = pd.read_csv(path, float_precision="round_trip")
        return cls({(int(r.level), str(r.series_id)): float(r.weight)
                    for r in frame.itertuples()})


def compute_weights(panel: PanelDataset, index: HierarchyIndex, last_day: int) -> WeightTable:
    """Dollar-sales weights over the 28 days ending at ``last_day``.

    Per level-12 series the dollar total is sum(units x that week's sell price);
    aggregate weights sum member dollars. Each level is normalized to 1/12.
    A sold unit with no price in the window is an error.
    """
    require(last_day >= WEIGHT_WINDOW, f"last_day must be >= {WEIGHT_WINDOW}, got {last_day}")
    require(last_day <= panel.n_days, f"last_day {last_day} beyond panel range {panel.n_days}")

    window = np.arange(last_day - WEIGHT_WINDOW, last_day)   # 0-based day columns
    units = panel.sales_values[:, window]
    prices = panel.price_day_matrix(last_day)[:, window]

    sold_unpriced = (units > 0) & np.isnan(prices)
    if sold_unpriced.any():
        row = int(np.argwhere(sold_unpriced.any(axis=1))[0][0])
        raise ValidationError(
            f"series {index.series_keys[row]!r}: units sold in the weighting window "
            "on a day with no sell price")

    dollars12 = np.nansum(units * prices, axis=1)

    values: dict[tuple[int, str], float] = {}
    for spec in LEVEL_SPECS:
        keys, agg = aggregate(dollars12, index, spec.level)
        level_dollars = agg[:, 0]
        total = level_dollars.sum()
        if total <= 0:
            raise ValidationError(
                f"level {spec.level}: zero total dollar sales in the weighting window")
        for key, d in zip(keys, level_dollars):
            values[(spec.level, key)] = float(d / total / N_LEVELS)

    table = WeightTable(values)
    logger.info("weights computed over days [%d, %d]; grand total %.12f",
                last_day - WEIGHT_WINDOW + 1, last_day, table.total())
    return table
