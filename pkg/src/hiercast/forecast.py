"""Validation splits and the 28-day recursive multi-step forecast loop.

Forecasting runs one day at a time: features for day t are assembled against
the observed history overlaid with the model's own predictions for earlier
horizon days, the model predicts, predictions are clipped at zero and written
into the buffer, and the loop advances. A direct (no-feedback) mode exists as
the equivalence oracle for feature sets whose sales lags never reach into the
horizon.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import PanelDataset
from .features import FeatureMatrix, PanelFeaturizer, SalesHistory
from .hierarchy import HierarchyIndex, aggregate
from .mlp import predict_averaged
from .validation import require

logger = logging.getLogger(__name__)

HORIZON = 28
SPLIT_END_OFFSETS = (0, 28, 336)    # days back from the final day, per split


@dataclass(frozen=True)
class ValidationSplit:
    name: str
    train_days: tuple[int, int]
    valid_days: tuple[int, int]

    @property
    def train_end(self) -> int:
        return self.train_days[1]


def make_splits(n_days: int, strict_printed_split1: bool = False) -> list[ValidationSplit]:
    """The three standard validation splits, anchored to the final day.

    Validation windows end 0, 28 and 336 days before the last day. Split 1
    normally trains through the day before its validation window;
    ``strict_printed_split1`` instead trains through n_days - 1, reproducing a
    published configuration whose train range overlaps its validation window.
    Splits that do not fit the panel are omitted with a warning.
    """
    splits = []
    for i, offset in enumerate(SPLIT_END_OFFSETS, start=1):
        val_end = n_days - offset
        val_start = val_end - HORIZON + 1
        train_end = val_start - 1
        if i == 1 and strict_printed_split1:
            train_end = n_days - 1
        if val_start < 2 or train_end < 1:
            logger.warning("split %d omitted: panel of %d days is too short", i, n_days)
            continue
        splits.append(ValidationSplit(f"split_{i}", (1, train_end), (val_start, val_end)))
    return splits


@dataclass
class ForecastGrid:
    """Point forecasts for every series of one level over a day range."""

    level: int
    keys: list[str]
    start_day: int
    values: np.ndarray      # (n_series, horizon), non-negative

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        require(self.values.ndim == 2 and self.values.shape[0] == len(self.keys),
                "forecast grid must be (n_series, horizon)")
        require(np.isfinite(self.values).all(), "forecast grid contains non-finite values")
        require((self.values >= 0).all(), "forecast grid contains negative values")

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def aggregate_to(self, index: HierarchyIndex, level: int) -> "ForecastGrid":
        require(self.level == 12, "aggregation starts from the level-12 grid")
        keys, values = aggregate(self.values, index, level)
        return ForecastGrid(level, keys, self.start_day, values)


# ---------------------------------------------------------------------------
# Model groups: anything that predicts one day's sales for all series
# ---------------------------------------------------------------------------

class PooledGbdtGroup:
    """Single boosted-tree model covering every series."""

    def __init__(self, name, model):
        self.name = name
        self.model = model

    def predict_day(self, matrix: FeatureMatrix) -> np.ndarray:
        return self.model.predict(matrix.values, schema_hash=matrix.schema_hash)


class PerStoreGbdtGroup:
    """One boosted-tree model per store; each predicts its own series rows."""

    def __init__(self, name, models: dict, store_of_series: np.ndarray):
        self.name = name
        self.models = models
        self.store_of_series = np.asarray(store_of_series)

    def predict_day(self, matrix: FeatureMatrix) -> np.ndarray:
        out = np.empty(matrix.n_rows)
        stores_of_rows = self.store_of_series[matrix.series_idx]
        for store, model in self.models.items():
            mask = stores_of_rows == store
            if mask.any():
                out[mask] = model.predict(matrix.values[mask], schema_hash=matrix.schema_hash)
        return out


class MlpGroup:
    """A set of MLPs whose snapshot predictions are averaged."""

    def __init__(self, name, models: list):
        self.name = name
        self.models = models

    def predict_day(self, matrix: FeatureMatrix) -> np.ndarray:
        return predict_averaged(self.models, matrix.values, schema_hash=matrix.schema_hash)


# ---------------------------------------------------------------------------
# Forecast loops
# ---------------------------------------------------------------------------

def recursive_forecast(group, featurizer: PanelFeaturizer, start_day: int,
                       h: int = HORIZON) -> ForecastGrid:
    """28-day recursive multi-step forecast for one model group.

    The group must have been trained on days before ``start_day``; its own
    clipped predictions become the sales history for subsequent days.
    """
    panel = featurizer.panel
    require(start_day >= 2, "start_day must leave at least one observed day")
    observed = panel.sales_values[:, :min(start_day - 1, panel.n_days)]
    history = SalesHistory(observed, capacity=start_day - 1 + h)
    values = np.empty((panel.n_series_level12, h))
    for t in range(h):
        day = start_day + t
        matrix = featurizer.day_matrix(day, history)
        preds = np.maximum(np.asarray(group.predict_day(matrix), dtype=np.float64), 0.0)
        history.append_day(preds)
        values[:, t] = preds
    return ForecastGrid(12, panel.series_keys, start_day, values)


def direct_forecast(group, featurizer: PanelFeaturizer, start_day: int,
                    h: int = HORIZON) -> ForecastGrid:
    """Oracle mode: all horizon days predicted against observed history only.

    Horizon days are left unobserved (NaN) in the history, so any feature that
    would read them comes out as a missing marker instead of a prediction.
    Equals the recursive forecast bit-exactly when no feature reads the buffer.
    """
    panel = featurizer.panel
    require(start_day >= 2, "start_day must leave at least one observed day")
    observed = panel.sales_values[:, :min(start_day - 1, panel.n_days)]
    history = SalesHistory(observed, capacity=start_day - 1 + h)
    n = panel.n_series_level12
    values = np.empty((n, h))
    for t in range(h):
        day = start_day + t
        history.append_day(np.full(n, np.nan))
    # rebuild day-by-day against the NaN-padded history
    for t in range(h):
        matrix = featurizer.day_matrix(start_day + t, history)
        preds = np.maximum(np.asarray(group.predict_day(matrix), dtype=np.float64), 0.0)
        values[:, t] = preds
    return ForecastGrid(12, panel.series_keys, start_day, values)
