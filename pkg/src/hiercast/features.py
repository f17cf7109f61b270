"""Feature engineering: (series, day) -> feature vector for single-day sales regression.

Six feature groups: categorical id codes, mean-target encodings, weekly price
statistics, calendar/SNAP fields, sales lags at 28+k days (k = 1..14), rolling
mean/std of sales in windows ending 28 days back, and lagged rolling windows
ending at configurable smaller lags. Sales-derived features only ever read
days strictly before the target day; NaN is the explicit missing marker.

The featurizer is fit/transform shaped: ``fit`` learns the target encodings on
a training day range, after which matrices for any day range (training) or a
single day against an arbitrary sales history (recursive inference) can be
built under one frozen schema.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import PanelDataset
from .errors import SchemaMismatchError, ValidationError
from .validation import check_day_range, require

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1
CATEGORICAL_COLUMNS = ("item_id", "dept_id", "cat_id", "store_id", "state_id")
EVENT_CODE = {"Sporting": 1, "Cultural": 2, "National": 3, "Religious": 4}
LAG_OFFSETS = tuple(range(29, 43))          # 28 + k for k = 1..14
DEFAULT_ROLLING_WINDOWS = (7, 14, 28, 56)
DEFAULT_LAG_ROLLING_LAGS = (1, 7, 14)
DEFAULT_LAG_ROLLING_WINDOWS = (7, 14, 28)


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: str
    params: tuple = ()

    def to_json(self):
        return {"name": self.name, "group": self.group, "params": list(self.params)}


def default_feature_specs(rolling_windows=DEFAULT_ROLLING_WINDOWS,
                          lag_rolling_lags=DEFAULT_LAG_ROLLING_LAGS,
                          lag_rolling_windows=DEFAULT_LAG_ROLLING_WINDOWS,
                          snap_mode: str = "own_plus_all") -> list[FeatureSpec]:
    """The default feature roster. snap_mode: 'own', 'all', or 'own_plus_all'."""
    require(snap_mode in ("own", "all", "own_plus_all"), f"unknown snap_mode {snap_mode!r}")
    specs: list[FeatureSpec] = []
    for col in CATEGORICAL_COLUMNS:
        specs.append(FeatureSpec(f"code_{col}", "categorical", ("code", col)))
    for col in CATEGORICAL_COLUMNS:
        specs.append(FeatureSpec(f"tmean_{col}", "categorical", ("target_mean", col)))
    for stat in ("current", "max", "min", "mean", "std", "nunique"):
        specs.append(FeatureSpec(f"price_{stat}", "price", (stat,)))
    for fieldname in ("wday", "month", "year", "event_1", "event_2"):
        specs.append(FeatureSpec(f"cal_{fieldname}", "calendar", (fieldname,)))
    if snap_mode in ("own", "own_plus_all"):
        specs.append(FeatureSpec("cal_snap_own", "calendar", ("snap_own",)))
    if snap_mode in ("all", "own_plus_all"):
        for state in ("CA", "TX", "WI"):
            specs.append(FeatureSpec(f"cal_snap_{state}", "calendar", (f"snap_{state}",)))
    for off in LAG_OFFSETS:
        specs.append(FeatureSpec(f"lag_{off}", "lag", (off,)))
    for w in rolling_windows:
        require(w > 0, "rolling windows must be positive")
        specs.append(FeatureSpec(f"rmean_28_{w}", "rolling", (28, w, "mean")))
        specs.append(FeatureSpec(f"rstd_28_{w}", "rolling", (28, w, "std")))
    for lag in lag_rolling_lags:
        require(lag > 0, "lag_rolling lags must be positive")
        for w in lag_rolling_windows:
            specs.append(FeatureSpec(f"rmean_{lag}_{w}", "lag_rolling", (lag, w, "mean")))
            specs.append(FeatureSpec(f"rstd_{lag}_{w}", "lag_rolling", (lag, w, "std")))
    names = [s.name for s in specs]
    require(len(names) == len(set(names)), "feature names must be unique")
    return specs


def specs_from_config(cfg: dict) -> list[FeatureSpec]:
    """Build the spec list from the human-editable key-value feature config."""
    return default_feature_specs(
        rolling_windows=tuple(cfg.get("rolling_windows", DEFAULT_ROLLING_WINDOWS)),
        lag_rolling_lags=tuple(cfg.get("lag_rolling_lags", DEFAULT_LAG_ROLLING_LAGS)),
        lag_rolling_windows=tuple(cfg.get("lag_rolling_windows", DEFAULT_LAG_ROLLING_WINDOWS)),
        snap_mode=cfg.get("snap_mode", "own_plus_all"),
    )


@dataclass
class FeatureMatrix:
    """Row-per-(series, day) design matrix with NaN missing markers."""

    columns: list[str]
    values: np.ndarray          # (rows, n_columns) float64
    target: np.ndarray          # (rows,), NaN in inference mode
    series_idx: np.ndarray      # (rows,) ordinal into the panel's series list
    d_index: np.ndarray         # (rows,)
    cat_columns: dict[str, int]  # code column name -> embedding cardinality (incl. row 0)
    schema_hash: str

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


class SalesHistory:
    """Per-series daily sales with O(1) window sums, supporting day appends.

    Used both for observed history (training features) and for the recursive
    forecast buffer, where predicted days are appended one at a time.
    """

    def __init__(self, values: np.ndarray, capacity: int | None = None):
        values = np.asarray(values, dtype=np.float64)
        require(values.ndim == 2, "sales history must be (n_series, n_days)")
        n, d = values.shape
        capacity = max(capacity or d, d)
        self._n_days = d
        self.values = np.zeros((n, capacity))
        self.values[:, :d] = values
        self._prefix = np.zeros((n, capacity + 1))
        self._prefix_sq = np.zeros((n, capacity + 1))
        np.cumsum(values, axis=1, out=self._prefix[:, 1:d + 1])
        np.cumsum(values ** 2, axis=1, out=self._prefix_sq[:, 1:d + 1])

    @property
    def n_days(self) -> int:
        return self._n_days

    def append_day(self, y: np.ndarray) -> None:
        d = self._n_days
        require(d < self.values.shape[1], "sales history capacity exhausted")
        self.values[:, d] = y
        self._prefix[:, d + 1] = self._prefix[:, d] + y
        self._prefix_sq[:, d + 1] = self._prefix_sq[:, d] + y ** 2
        self._n_days = d + 1

    def day(self, d: int) -> np.ndarray:
        """Values at 1-based day d."""
        return self.values[:, d - 1]

    def window_sum(self, lo: int, hi: int) -> np.ndarray:
        """Sum over days [lo, hi], 1-based inclusive."""
        return self._prefix[:, hi] - self._prefix[:, lo - 1]

    def window_sq_sum(self, lo: int, hi: int) -> np.ndarray:
        return self._prefix_sq[:, hi] - self._prefix_sq[:, lo - 1]


def mean_target_encode(panel: PanelDataset, column: str, train_days: tuple[int, int]):
    """Per-category mean of the target over active rows within train_days only.

    Returns (mapping category -> mean, global mean). Categories absent from the
    training range fall back to the global mean downstream.
    """
    a, b = train_days
    check_day_range(a, b, panel.n_days, "mean_target_encode")
    first = panel.first_active
    n = panel.n_series_level12
    cats = panel.series[column].to_numpy()

    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    day_lo = np.maximum(first, a)
    spans = np.maximum(b - day_lo + 1, 0)
    totals = np.zeros(n)
    for i in range(n):
        if spans[i] > 0:
            totals[i] = panel.sales_values[i, day_lo[i] - 1:b].sum()
    for i in range(n):
        if spans[i] <= 0:
            continue
        c = cats[i]
        sums[c] = sums.get(c, 0.0) + totals[i]
        counts[c] = counts.get(c, 0) + int(spans[i])
    require(sum(counts.values()) > 0, "mean_target_encode: no active rows in the training range")
    global_mean = float(sum(sums.values()) / sum(counts.values()))
    return {c: sums[c] / counts[c] for c in sums}, global_mean


class PanelFeaturizer:
    """Builds feature matrices for a panel under one frozen schema.

    ``fit(train_days)`` learns target encodings; ``training_matrix`` emits one
    row per active (series, day); ``day_matrix`` emits one row per series for a
    single day against a supplied SalesHistory (recursive inference).
    """

    def __init__(self, panel: PanelDataset, specs: list[FeatureSpec] | None = None):
        self.panel = panel
        self.specs = list(specs) if specs is not None else default_feature_specs()
        self.columns = [s.name for s in self.specs]
        self._fitted = False
        self._encodings: dict[str, dict[str, float]] = {}
        self._global_means: dict[str, float] = {}
        self.train_days: tuple[int, int] | None = None

        series = panel.series
        self._codes: dict[str, np.ndarray] = {}
        self.cat_cardinality: dict[str, int] = {}
        for col in CATEGORICAL_COLUMNS:
            cats = sorted(series[col].unique())
            lookup = {c: i + 1 for i, c in enumerate(cats)}   # 0 reserved for unseen
            self._codes[col] = series[col].map(lookup).to_numpy(dtype=np.float64)
            self.cat_cardinality[col] = len(cats) + 1

        self._calendar_days = len(panel.calendar)
        self._wday = panel.calendar["wday"].to_numpy(dtype=np.float64)
        self._month = panel.calendar["month"].to_numpy(dtype=np.float64)
        self._year = panel.calendar["year"].to_numpy(dtype=np.float64)
        self._event1 = panel.calendar["event_type_1"].map(EVENT_CODE).fillna(0.0).to_numpy(dtype=np.float64)
        self._event2 = panel.calendar["event_type_2"].map(EVENT_CODE).fillna(0.0).to_numpy(dtype=np.float64)
        self._snap: dict[str, np.ndarray] = {}
        for state in ("CA", "TX", "WI"):
            self._snap[state] = panel.calendar[f"snap_{state}"].to_numpy(dtype=np.float64)
        states = series["state_id"].to_numpy()
        zero = np.zeros(self._calendar_days)
        self._snap_own_by_series = [self._snap.get(st, zero) for st in states]

        self._week_of_day = panel.day_week_ordinal
        self._price_stats = self._cumulative_price_stats()

    # -- schema ---------------------------------------------------------------

    def fit(self, train_days: tuple[int, int]) -> "PanelFeaturizer":
        a, b = int(train_days[0]), int(train_days[1])
        check_day_range(a, b, self.panel.n_days, "featurizer train range")
        self.train_days = (a, b)
        self._encodings = {}
        self._global_means = {}
        for col in CATEGORICAL_COLUMNS:
            enc, gmean = mean_target_encode(self.panel, col, (a, b))
            self._encodings[col] = enc
            self._global_means[col] = gmean
        self._fitted = True
        return self

    @property
    def schema_hash(self) -> str:
        require(self._fitted, "featurizer must be fit before a schema exists")
        payload = {
            "version": CACHE_FORMAT_VERSION,
            "specs": [s.to_json() for s in self.specs],
            "train_days": list(self.train_days),
            "cardinalities": self.cat_cardinality,
            "encodings": {c: sorted((k, repr(v)) for k, v in self._encodings[c].items())
                          for c in self._encodings},
            "global_means": {c: repr(v) for c, v in self._global_means.items()},
        }
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
        return digest[:16]

    @property
    def cat_columns(self) -> dict[str, int]:
        return {f"code_{col}": card for col, card in self.cat_cardinality.items()}

    # -- matrix assembly --------------------------------------------------------

    def training_matrix(self, day_range: tuple[int, int] | None = None) -> FeatureMatrix:
        require(self._fitted, "fit() must run before building matrices")
        a, b = day_range if day_range is not None else self.train_days
        check_day_range(a, b, self.panel.n_days, "training matrix range")
        history = SalesHistory(self.panel.sales_values)
        days = np.arange(a, b + 1)
        blocks = self._feature_blocks(days, history)

        n = self.panel.n_series_level12
        active = days[None, :] >= self.panel.first_active[:, None]   # (n, m)
        flat = active.ravel()
        series_idx = np.repeat(np.arange(n), len(days))[flat]
        d_index = np.tile(days, n)[flat]
        values = np.stack([blk.ravel()[flat] for blk in blocks], axis=1)
        target = self.panel.sales_values[series_idx, d_index - 1]
        return FeatureMatrix(self.columns, values, target, series_idx, d_index,
                             self.cat_columns, self.schema_hash)

    def day_matrix(self, day: int, history: SalesHistory) -> FeatureMatrix:
        """One row per series for a single day; sales-derived features read
        from ``history`` (observed days overlaid with prior forecasts)."""
        require(self._fitted, "fit() must run before building matrices")
        require(1 <= day <= self._calendar_days,
                f"day {day} beyond calendar coverage ({self._calendar_days} days)")
        require(history.n_days >= day - 1,
                f"history covers {history.n_days} days; day {day} needs {day - 1}")
        days = np.array([day])
        blocks = self._feature_blocks(days, history)
        n = self.panel.n_series_level12
        values = np.stack([blk.ravel() for blk in blocks], axis=1)
        return FeatureMatrix(self.columns, values, np.full(n, np.nan),
                             np.arange(n), np.full(n, day), self.cat_columns, self.schema_hash)

    def inference_matrix(self, days, history: SalesHistory) -> FeatureMatrix:
        """Multi-day variant of day_matrix (the direct-mode oracle path)."""
        mats = [self.day_matrix(int(d), history) for d in days]
        return FeatureMatrix(
            self.columns,
            np.concatenate([m.values for m in mats], axis=0),
            np.concatenate([m.target for m in mats]),
            np.concatenate([m.series_idx for m in mats]),
            np.concatenate([m.d_index for m in mats]),
            self.cat_columns,
            self.schema_hash,
        )

    # -- feature blocks: each returns (n_series, len(days)) ----------------------

    def _feature_blocks(self, days: np.ndarray, history: SalesHistory) -> list[np.ndarray]:
        blocks = []
        for spec in self.specs:
            if spec.group == "categorical":
                blocks.append(self._categorical_block(spec, days))
            elif spec.group == "price":
                blocks.append(self._price_block(spec, days))
            elif spec.group == "calendar":
                blocks.append(self._calendar_block(spec, days))
            elif spec.group in ("lag", "rolling", "lag_rolling"):
                blocks.append(self._sales_block(spec, days, history))
            else:
                raise ValidationError(f"unknown feature group {spec.group!r}")
        return blocks

    def _categorical_block(self, spec, days):
        kind, col = spec.params
        n, m = self.panel.n_series_level12, len(days)
        if kind == "code":
            return np.broadcast_to(self._codes[col][:, None], (n, m)).copy()
        enc = self._encodings[col]
        gmean = self._global_means[col]
        vec = np.array([enc.get(c, gmean) for c in self.panel.series[col]])
        return np.broadcast_to(vec[:, None], (n, m)).copy()

    def _price_block(self, spec, days):
        stat = spec.params[0]
        weeks = self._week_of_day[days - 1]
        if stat == "current":
            return self.panel.price_week_table()[:, weeks]
        return self._price_stats[stat][:, weeks]

    def _calendar_block(self, spec, days):
        fieldname = spec.params[0]
        n, m = self.panel.n_series_level12, len(days)
        idx = days - 1
        if fieldname == "snap_own":
            return np.stack([row[idx] for row in self._snap_own_by_series])
        per_day = {
            "wday": self._wday, "month": self._month, "year": self._year,
            "event_1": self._event1, "event_2": self._event2,
            "snap_CA": self._snap["CA"], "snap_TX": self._snap["TX"], "snap_WI": self._snap["WI"],
        }[fieldname][idx]
        return np.broadcast_to(per_day[None, :], (n, m)).copy()

    def _sales_block(self, spec, days, history):
        n, m = self.panel.n_series_level12, len(days)
        out = np.full((n, m), np.nan)
        first = self.panel.first_active
        if spec.group == "lag":
            off = spec.params[0]
            for j, d in enumerate(days):
                src = int(d) - off
                if src < 1:
                    continue
                col = history.day(src)
                ok = src >= first
                out[ok, j] = col[ok]
            return out
        lag, w, stat = spec.params
        for j, d in enumerate(days):
            hi = int(d) - lag
            lo = hi - w + 1
            if lo < 1:
                continue
            s = history.window_sum(lo, hi)
            mean = s / w
            if stat == "mean":
                vals = mean
            else:
                var = history.window_sq_sum(lo, hi) / w - mean ** 2
                vals = np.sqrt(np.maximum(var, 0.0))
            ok = lo >= first
            out[ok, j] = vals[ok]
        return out

    # -- price statistics over weeks <= the day's week ---------------------------

    def _cumulative_price_stats(self):
        table = self.panel.price_week_table()
        n, n_weeks = table.shape
        priced = ~np.isnan(table)
        filled = np.where(priced, table, 0.0)
        count = np.cumsum(priced, axis=1).astype(np.float64)
        csum = np.cumsum(filled, axis=1)
        csq = np.cumsum(filled ** 2, axis=1)
        cmax = np.fmax.accumulate(np.where(priced, table, -np.inf), axis=1)
        cmin = np.fmin.accumulate(np.where(priced, table, np.inf), axis=1)

        nunique = np.zeros((n, n_weeks))
        for i in range(n):
            seen = set()
            c = 0
            for wk in range(n_weeks):
                v = table[i, wk]
                if priced[i, wk] and v not in seen:
                    seen.add(v)
                    c += 1
                nunique[i, wk] = c

        none_yet = count == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(none_yet, np.nan, csum / np.maximum(count, 1))
            var = csq / np.maximum(count, 1) - mean ** 2
            std = np.where(none_yet, np.nan, np.sqrt(np.maximum(var, 0.0)))
        return {
            "max": np.where(none_yet, np.nan, cmax),
            "min": np.where(none_yet, np.nan, cmin),
            "mean": mean,
            "std": std,
            "nunique": np.where(none_yet, np.nan, nunique),
        }


# -- single-(series, day) convenience wrappers ---------------------------------

def _single(panel, specs, series_key, day, fitted_range=None):
    fz = PanelFeaturizer(panel, specs)
    fz.fit(fitted_range or (1, panel.n_days))
    mat = fz.day_matrix(day, SalesHistory(panel.sales_values, capacity=day))
    row = panel.series_keys.index(series_key)
    return mat, row


def price_features(panel: PanelDataset, series_key: str, day: int) -> np.ndarray:
    """(current, max, min, mean, std, n_unique) over priced weeks up to the day's week."""
    specs = [FeatureSpec(f"price_{s}", "price", (s,))
             for s in ("current", "max", "min", "mean", "std", "nunique")]
    mat, row = _single(panel, specs, series_key, day)
    return mat.values[row]


def calendar_features(panel: PanelDataset, series_key: str, day: int) -> dict[str, float]:
    specs = [FeatureSpec(f"cal_{f}", "calendar", (f,))
             for f in ("wday", "month", "year", "event_1", "event_2",
                       "snap_own", "snap_CA", "snap_TX", "snap_WI")]
    mat, row = _single(panel, specs, series_key, day)
    return dict(zip(mat.columns, mat.values[row]))


def lag_features(panel: PanelDataset, series_key: str, day: int) -> np.ndarray:
    specs = [FeatureSpec(f"lag_{off}", "lag", (off,)) for off in LAG_OFFSETS]
    mat, row = _single(panel, specs, series_key, day)
    return mat.values[row]


def rolling_features(panel: PanelDataset, series_key: str, day: int,
                     windows=DEFAULT_ROLLING_WINDOWS) -> np.ndarray:
    specs = []
    for w in windows:
        specs.append(FeatureSpec(f"rmean_28_{w}", "rolling", (28, w, "mean")))
        specs.append(FeatureSpec(f"rstd_28_{w}", "rolling", (28, w, "std")))
    mat, row = _single(panel, specs, series_key, day)
    return mat.values[row]


def lag_rolling_features(panel: PanelDataset, series_key: str, day: int, lag: int,
                         windows=DEFAULT_LAG_ROLLING_WINDOWS) -> np.ndarray:
    specs = []
    for w in windows:
        specs.append(FeatureSpec(f"rmean_{lag}_{w}", "lag_rolling", (lag, w, "mean")))
        specs.append(FeatureSpec(f"rstd_{lag}_{w}", "lag_rolling", (lag, w, "std")))
    mat, row = _single(panel, specs, series_key, day)
    return mat.values[row]


# -- on-disk cache ---------------------------------------------------------------

def save_matrix(matrix: FeatureMatrix, path) -> None:
    """Columnar binary cache with an embedded schema header and content digest."""
    header = json.dumps({
        "format_version": CACHE_FORMAT_VERSION,
        "columns": matrix.columns,
        "cat_columns": matrix.cat_columns,
        "schema_hash": matrix.schema_hash,
    }, sort_keys=True)
    digest = _content_digest(matrix)
    np.savez(path,
             header=np.frombuffer(header.encode(), dtype=np.uint8),
             digest=np.frombuffer(digest.encode(), dtype=np.uint8),
             values=matrix.values, target=matrix.target,
             series_idx=matrix.series_idx, d_index=matrix.d_index)


def load_matrix(path) -> FeatureMatrix:
    """Load a cached matrix; raises ValidationError on digest mismatch (tampering)."""
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        digest = bytes(z["digest"]).decode()
        if header.get("format_version") != CACHE_FORMAT_VERSION:
            raise ValidationError(f"cache {path}: unsupported format version")
        matrix = FeatureMatrix(
            columns=list(header["columns"]),
            values=z["values"], target=z["target"],
            series_idx=z["series_idx"], d_index=z["d_index"],
            cat_columns={k: int(v) for k, v in header["cat_columns"].items()},
            schema_hash=header["schema_hash"],
        )
    if _content_digest(matrix) != digest:
        raise ValidationError(f"cache {path}: content digest mismatch (corrupted cache)")
    return matrix


def _content_digest(matrix: FeatureMatrix) -> str:
    h = hashlib.sha256()
    h.update(matrix.schema_hash.encode())
    for arr in (matrix.values, matrix.target, matrix.series_idx, matrix.d_index):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
