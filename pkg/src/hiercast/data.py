"""Ingestion of the three-file retail sales layout (wide sales, calendar, weekly prices).

The on-disk schema is the standard M5 layout so real competition data can be
dropped in unchanged:

* sales:    item_id, dept_id, cat_id, store_id, state_id, d_1 .. d_N
            (an extra leading ``id`` column is tolerated and ignored)
* calendar: date, wm_yr_wk, weekday, wday, month, year, d, event_name_1,
            event_type_1, event_name_2, event_type_2, snap_CA, snap_TX, snap_WI
* prices:   store_id, item_id, wm_yr_wk, sell_price
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ValidationError
from .validation import check_columns, require

logger = logging.getLogger(__name__)

ID_COLUMNS = ["item_id", "dept_id", "cat_id", "store_id", "state_id"]
EVENT_TYPES = ("Sporting", "Cultural", "National", "Religious")
SNAP_COLUMNS = ["snap_CA", "snap_TX", "snap_WI"]
CALENDAR_COLUMNS = [
    "date", "wm_yr_wk", "weekday", "wday", "month", "year", "d",
    "event_name_1", "event_type_1", "event_name_2", "event_type_2",
] + SNAP_COLUMNS
HORIZON = 28


@dataclass
class SalesWide:
    """Validated wide-format unit sales: one row per (item, store), one column per day."""

    frame: pd.DataFrame
    n_days: int

    @property
    def day_columns(self) -> list[str]:
        return [f"d_{i}" for i in range(1, self.n_days + 1)]

    @property
    def n_series(self) -> int:
        return len(self.frame)


def load_sales(path) -> SalesWide:
    """Parse and validate the wide sales file.

    Day count N is inferred from the header. Raises ValidationError with the
    offending row index on negative or non-integral sales.
    """
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError(f"sales file {path}: parse failure: {exc}") from exc
    check_columns(frame, ID_COLUMNS, "sales file")
    day_cols = [c for c in frame.columns if c.startswith("d_")]
    require(len(day_cols) > 0, "sales file: no day columns (d_1..d_N) found")
    indices = []
    for col in day_cols:
        try:
            indices.append(int(col[2:]))
        except ValueError:
            raise ValidationError(f"sales file: malformed day column name {col!r}")
    n_days = max(indices)
    require(sorted(indices) == list(range(1, n_days + 1)),
            "sales file: day columns are not contiguous d_1..d_N")

    values = frame[[f"d_{i}" for i in range(1, n_days + 1)]].to_numpy()
    if values.dtype.kind not in "iu":
        values = np.asarray(values, dtype=np.float64)
        bad = ~np.isfinite(values) | (values != np.floor(values))
        if bad.any():
            row = int(np.argwhere(bad.any(axis=1))[0][0])
            raise ValidationError(f"sales file row {row}: non-integral or missing sales value")
    if (values < 0).any():
        row = int(np.argwhere((values < 0).any(axis=1))[0][0])
        raise ValidationError(f"sales file row {row}: negative sales value")

    dupes = frame.duplicated(subset=["item_id", "store_id"])
    if dupes.any():
        row = int(np.argwhere(dupes.to_numpy())[0][0])
        raise ValidationError(f"sales file row {row}: duplicate (item_id, store_id) pair")

    keep = ID_COLUMNS + [f"d_{i}" for i in range(1, n_days + 1)]
    logger.info("loaded sales: %d series x %d days", len(frame), n_days)
    return SalesWide(frame=frame[keep].reset_index(drop=True), n_days=n_days)


def load_calendar(path) -> pd.DataFrame:
    """Parse and validate the calendar file; rows are returned sorted by day index."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError(f"calendar file {path}: parse failure: {exc}") from exc
    check_columns(frame, CALENDAR_COLUMNS, "calendar file")

    d_index = []
    for i, d in enumerate(frame["d"]):
        try:
            d_index.append(int(str(d).split("_")[1]))
        except (IndexError, ValueError):
            raise ValidationError(f"calendar file row {i}: malformed day label {d!r}")
    frame = frame.assign(d_index=d_index).sort_values("d_index").reset_index(drop=True)
    got = frame["d_index"].to_numpy()
    expected = np.arange(1, len(frame) + 1)
    if not np.array_equal(got, expected):
        first_bad = int(expected[got != expected][0]) if len(got) == len(expected) else len(got)
        raise ValidationError(f"calendar file: day indices not contiguous from 1 (near d_{first_bad})")

    for col in ("event_type_1", "event_type_2"):
        present = frame[col].dropna()
        bad = present[~present.isin(EVENT_TYPES)]
        if len(bad):
            raise ValidationError(
                f"calendar file: unknown event type {bad.iloc[0]!r} in {col} "
                f"(expected one of {list(EVENT_TYPES)})")
    for col in SNAP_COLUMNS:
        vals = frame[col].to_numpy()
        if not np.isin(vals, (0, 1)).all():
            raise ValidationError(f"calendar file: {col} contains values outside {{0, 1}}")

    logger.info("loaded calendar: %d days", len(frame))
    return frame


def load_prices(path) -> pd.DataFrame:
    """Parse and validate weekly sell prices. Weeks may be absent before an
    item goes on sale; duplicates and non-positive prices are rejected."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError(f"prices file {path}: parse failure: {exc}") from exc
    check_columns(frame, ["store_id", "item_id", "wm_yr_wk", "sell_price"], "prices file")

    price = frame["sell_price"].to_numpy(dtype=np.float64)
    if not np.isfinite(price).all() or (price <= 0).any():
        row = int(np.argwhere(~(np.isfinite(price) & (price > 0)))[0][0])
        raise ValidationError(f"prices file row {row}: sell_price must be a positive number")
    dupes = frame.duplicated(subset=["store_id", "item_id", "wm_yr_wk"])
    if dupes.any():
        row = int(np.argwhere(dupes.to_numpy())[0][0])
        raise ValidationError(f"prices file row {row}: duplicate (store_id, item_id, wm_yr_wk) key")

    logger.info("loaded prices: %d weekly rows", len(frame))
    return frame.reset_index(drop=True)


@dataclass
class PanelDataset:
    """Validated long-format panel plus side tables.

    Immutable after construction; safe to share across threads for reading.

    Attributes:
        series: per level-12 series metadata, sorted by series_key
            (series_key, item_id, dept_id, cat_id, store_id, state_id, first_active_day).
        sales: long table (series_key, d_index, y) covering, for every series,
            exactly the days [first_active_day, n_days].
        calendar: validated calendar rows with a dense week_ordinal column,
            covering at least n_days + 28 days.
        prices: validated weekly price rows.
        n_days: number of observed sales days N.
    """

    series: pd.DataFrame
    sales: pd.DataFrame
    calendar: pd.DataFrame
    prices: pd.DataFrame
    n_days: int
    sales_values: np.ndarray = field(repr=False)   # (n_series, n_days) float64
    first_active: np.ndarray = field(repr=False)   # (n_series,) int day index
    _price_weeks: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_series_level12(self) -> int:
        return len(self.series)

    @property
    def series_keys(self) -> list[str]:
        return self.series["series_key"].tolist()

    @property
    def day_week_ordinal(self) -> np.ndarray:
        """Dense 0-based week ordinal for calendar days (index 0 = day 1)."""
        return self.calendar["week_ordinal"].to_numpy()

    @property
    def n_weeks(self) -> int:
        return int(self.calendar["week_ordinal"].iloc[-1]) + 1

    def price_week_table(self) -> np.ndarray:
        """(n_series, n_weeks) sell prices by calendar week ordinal, NaN where unpriced."""
        if self._price_weeks is None:
            week_of = {wk: i for wk, i in zip(self.calendar["wm_yr_wk"], self.calendar["week_ordinal"])}
            table = np.full((self.n_series_level12, self.n_weeks), np.nan)
            key_row = {k: i for i, k in enumerate(self.series_keys)}
            items = self.prices["item_id"].to_numpy()
            stores = self.prices["store_id"].to_numpy()
            weeks = self.prices["wm_yr_wk"].to_numpy()
            vals = self.prices["sell_price"].to_numpy(dtype=np.float64)
            skipped = 0
            for item, store, wk, price in zip(items, stores, weeks, vals):
                row = key_row.get(f"{item}_{store}")
                col = week_of.get(wk)
                if row is None:
                    continue  # priced series absent from the sales file
                if col is None:
                    skipped += 1
                    continue
                table[row, col] = price
            if skipped:
                logger.debug("ignored %d price rows for weeks outside the calendar", skipped)
            self._price_weeks = table
        return self._price_weeks

    def price_day_matrix(self, through_day: int) -> np.ndarray:
        """(n_series, through_day) sell price per day (the day's week price), NaN where unpriced."""
        weeks = self.price_week_table()
        ordinals = self.day_week_ordinal[:through_day]
        return weeks[:, ordinals]


def build_panel(sales: SalesWide, calendar: pd.DataFrame, prices: pd.DataFrame) -> PanelDataset:
    """Join the three validated inputs into a PanelDataset.

    A series becomes active on the first calendar day of its first priced week;
    earlier days are excluded from the long table (and hence from training).
    The calendar must extend at least 28 days past the sales range so the
    forecast horizon has calendar/price coverage.
    """
    n_days = sales.n_days
    require(len(calendar) >= n_days + HORIZON,
            f"calendar covers {len(calendar)} days; need at least n_days + 28 = {n_days + HORIZON}")

    wide = sales.frame.sort_values(["item_id", "store_id"], kind="mergesort").reset_index(drop=True)
    series = wide[ID_COLUMNS].copy()
    series.insert(0, "series_key", wide["item_id"] + "_" + wide["store_id"])
    require(series["series_key"].is_unique, "series keys are not unique after item_id + store_id join")

    # dense week ordinals in day order
    calendar = calendar.copy()
    if "d_index" not in calendar.columns:
        calendar["d_index"] = np.arange(1, len(calendar) + 1)
    codes, _ = pd.factorize(calendar["wm_yr_wk"], sort=False)
    require((np.diff(codes) >= 0).all() and (np.diff(codes) <= 1).all(),
            "calendar wm_yr_wk must change at most once per day and never revisit a week")
    calendar["week_ordinal"] = codes

    week_of = {wk: i for wk, i in zip(calendar["wm_yr_wk"], calendar["week_ordinal"])}
    first_week = np.full(len(series), -1, dtype=np.int64)
    key_row = {k: i for i, k in enumerate(series["series_key"])}
    price_keys = prices["item_id"] + "_" + prices["store_id"]
    for key, wk in zip(price_keys, prices["wm_yr_wk"]):
        row = key_row.get(key)
        col = week_of.get(wk)
        if row is None or col is None:
            continue
        if first_week[row] < 0 or col < first_week[row]:
            first_week[row] = col

    never_priced = np.argwhere(first_week < 0).ravel()
    if len(never_priced):
        key = series["series_key"].iloc[int(never_priced[0])]
        raise ValidationError(f"series {key!r}: no price rows in any calendar week")

    week_ordinals = calendar["week_ordinal"].to_numpy()
    first_day_of_week = np.zeros(int(week_ordinals.max()) + 1, dtype=np.int64)
    for d in range(len(week_ordinals) - 1, -1, -1):
        first_day_of_week[week_ordinals[d]] = d + 1
    first_active = first_day_of_week[first_week]

    if (first_active > n_days).any():
        key = series["series_key"].iloc[int(np.argwhere(first_active > n_days)[0][0])]
        raise ValidationError(f"series {key!r}: first priced week starts after the sales range")

    values = wide[[f"d_{i}" for i in range(1, n_days + 1)]].to_numpy(dtype=np.float64)

    # long frame, active days only
    counts = n_days - first_active + 1
    series_idx = np.repeat(np.arange(len(series)), counts)
    d_index = np.concatenate([np.arange(fa, n_days + 1) for fa in first_active]) if len(series) else np.empty(0, int)
    y = values[series_idx, d_index - 1]
    long = pd.DataFrame({
        "series_key": pd.Categorical.from_codes(series_idx, categories=series["series_key"]),
        "d_index": d_index,
        "y": y,
    })

    series = series.assign(first_active_day=first_active)
    panel = PanelDataset(
        series=series,
        sales=long,
        calendar=calendar,
        prices=prices,
        n_days=n_days,
        sales_values=values,
        first_active=first_active,
    )

    # mid-history price gaps are tolerated (item temporarily off sale); surface them
    price_days = panel.price_day_matrix(n_days)
    day_grid = np.arange(1, n_days + 1)
    active_mask = day_grid[None, :] >= first_active[:, None]
    gaps = int((np.isnan(price_days) & active_mask).sum())
    if gaps:
        logger.warning("panel has %d active day-cells with no price for the week "
                       "(item off sale mid-history); price features will carry missing markers", gaps)

    logger.info("built panel: %d series, %d days, %d active rows",
                len(series), n_days, len(long))
    return panel
