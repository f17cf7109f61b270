"""Seeded synthetic retail panel generator in the three-file input layout.

The generator targets the qualitative shape of real store/item unit sales:
heavily intermittent level-12 series (roughly two thirds of daily observations
are zero) driven by a shared weekday/SNAP/price structure, so that aggregates
are far smoother than individual series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

STATES = ("CA", "TX", "WI")
CATEGORIES = ("FOODS", "HOBBIES", "HOUSEHOLD")
DEPTS_PER_CATEGORY = 2
SNAP_DAYS = {
    "CA": set(range(1, 11)),
    "TX": {1, 3, 5, 6, 7, 9, 11, 12, 13, 15},
    "WI": {2, 3, 5, 8, 9, 11, 12, 14, 15},
}
# (month, day) -> (name, type); one date carries two events to exercise slot 2
EVENTS = {
    (2, 5): [("SportChampionship", "Sporting")],
    (2, 14): [("ValentinesDay", "Cultural")],
    (4, 10): [("SpringFeast", "Religious")],
    (7, 4): [("IndependenceDay", "National")],
    (6, 15): [("SummerGames", "Sporting"), ("CityFestival", "Cultural")],
    (11, 26): [("HarvestFeast", "National")],
}
WEEKDAY_LIFT = {1: 1.7, 2: 1.5, 3: 0.8, 4: 0.7, 5: 0.7, 6: 0.9, 7: 1.2}  # wday 1 = Saturday


@dataclass
class SyntheticSpec:
    n_stores: int = 3
    n_items: int = 12
    n_days: int = 400
    seed: int = 0
    base_rate: float = 0.27           # mean daily demand intensity before lifts
                                      # (calibrated so roughly 2/3 of daily sales are zero)
    rate_sigma: float = 0.8           # lognormal spread of per-series intensity
    late_release_fraction: float = 0.25
    price_change_prob: float = 0.15
    elasticity: float = 1.3


def _store_ids(n_stores: int) -> list[tuple[str, str]]:
    per_state = {s: 0 for s in STATES}
    out = []
    for i in range(n_stores):
        state = STATES[i % len(STATES)]
        per_state[state] += 1
        out.append((f"{state}_{per_state[state]}", state))
    return out


def _item_ids(n_items: int) -> list[tuple[str, str, str]]:
    depts = [(f"{cat}_{d}", cat) for cat in CATEGORIES for d in range(1, DEPTS_PER_CATEGORY + 1)]
    out = []
    for i in range(n_items):
        dept, cat = depts[i % len(depts)]
        out.append((f"{dept}_{(i // len(depts)) + 1:03d}", dept, cat))
    return out


def make_calendar(n_calendar_days: int, start: str = "2011-01-29") -> pd.DataFrame:
    """Calendar in the standard layout, starting on a Saturday by default."""
    dates = pd.date_range(start, periods=n_calendar_days, freq="D")
    wday = (dates.weekday + 2) % 7 + 1          # Saturday = 1 .. Friday = 7
    week_index = np.arange(n_calendar_days) // 7
    wm_yr_wk = 11101 + 100 * (week_index // 52) + week_index % 52

    names1, types1, names2, types2 = [], [], [], []
    for d in dates:
        evs = EVENTS.get((d.month, d.day), [])
        names1.append(evs[0][0] if len(evs) > 0 else np.nan)
        types1.append(evs[0][1] if len(evs) > 0 else np.nan)
        names2.append(evs[1][0] if len(evs) > 1 else np.nan)
        types2.append(evs[1][1] if len(evs) > 1 else np.nan)

    frame = pd.DataFrame({
        "date": dates.strftime("%Y-%m-%d"),
        "wm_yr_wk": wm_yr_wk,
        "weekday": dates.day_name(),
        "wday": wday,
        "month": dates.month,
        "year": dates.year,
        "d": [f"d_{i}" for i in range(1, n_calendar_days + 1)],
        "event_name_1": pd.Series(names1, dtype=object),
        "event_type_1": pd.Series(types1, dtype=object),
        "event_name_2": pd.Series(names2, dtype=object),
        "event_type_2": pd.Series(types2, dtype=object),
    })
    for state in STATES:
        frame[f"snap_{state}"] = [int(day in SNAP_DAYS[state]) for day in dates.day]
    return frame


def generate(spec: SyntheticSpec) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """Return (sales_wide, calendar, prices) frames for the given spec."""
    rng = np.random.default_rng(spec.seed)
    calendar = make_calendar(spec.n_days + 28)
    stores = _store_ids(spec.n_stores)
    items = _item_ids(spec.n_items)
    n_weeks = int(np.ceil((spec.n_days + 28) / 7))

    day_of_month = pd.to_datetime(calendar["date"]).dt.day.to_numpy()
    wday = calendar["wday"].to_numpy()
    has_event = calendar["event_name_1"].notna().to_numpy()
    snap = {state: calendar[f"snap_{state}"].to_numpy() for state in STATES}
    season = 1.0 + 0.15 * np.sin(2 * np.pi * np.arange(1, spec.n_days + 29) / 365.0)

    sales_rows = []
    price_rows = []
    for item_id, dept_id, cat_id in items:
        for store_id, state in stores:
            if rng.random() < spec.late_release_fraction:
                release_week = int(rng.integers(1, max(2, int(n_weeks * 0.4))))
            else:
                release_week = 0
            base_price = float(np.round(np.exp(rng.normal(np.log(3.0), 0.4)), 2))
            price = base_price
            week_prices = np.full(n_weeks, np.nan)
            for w in range(release_week, n_weeks):
                if w > release_week and rng.random() < spec.price_change_prob:
                    price = float(np.round(price * rng.choice([0.9, 0.95, 1.05, 1.1]), 2))
                    price = max(price, 0.01)
                week_prices[w] = price
                price_rows.append((store_id, item_id, int(11101 + 100 * (w // 52) + w % 52), price))

            lam_base = spec.base_rate * float(np.exp(rng.normal(0.0, spec.rate_sigma)))
            snap_lift = 1.35 if cat_id == "FOODS" else 1.1
            day_idx = np.arange(spec.n_days)
            week_of_day = day_idx // 7
            current_price = week_prices[week_of_day]
            lifts = (
                np.vectorize(WEEKDAY_LIFT.get)(wday[:spec.n_days])
                * np.where(snap[state][:spec.n_days] == 1, snap_lift, 1.0)
                * np.where(has_event[:spec.n_days], 1.2, 1.0)
                * season[:spec.n_days]
            )
            with np.errstate(invalid="ignore"):
                price_lift = np.where(np.isnan(current_price), 0.0,
                                      (base_price / current_price) ** spec.elasticity)
            lam = lam_base * lifts * price_lift
            y = rng.poisson(lam)
            y[week_of_day < release_week] = 0
            sales_rows.append((item_id, dept_id, cat_id, store_id, state, y))

    sales = pd.DataFrame(
        [(r[0], r[1], r[2], r[3], r[4]) for r in sales_rows],
        columns=["item_id", "dept_id", "cat_id", "store_id", "state_id"],
    )
    day_frame = pd.DataFrame(
        np.stack([r[5] for r in sales_rows]),
        columns=[f"d_{i}" for i in range(1, spec.n_days + 1)],
    )
    sales = pd.concat([sales, day_frame], axis=1)
    prices = pd.DataFrame(price_rows, columns=["store_id", "item_id", "wm_yr_wk", "sell_price"])
    prices = prices.sort_values(["store_id", "item_id", "wm_yr_wk"]).reset_index(drop=True)
    return sales, calendar, prices


def write_files(spec: SyntheticSpec, out_dir) -> dict[str, str]:
    """Generate and write sales.csv / calendar.csv / prices.csv under out_dir."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sales, calendar, prices = generate(spec)
    paths = {
        "sales": str(out / "sales.csv"),
        "calendar": str(out / "calendar.csv"),
        "prices": str(out / "prices.csv"),
    }
    sales.to_csv(paths["sales"], index=False)
    calendar.to_csv(paths["calendar"], index=False)
    prices.to_csv(paths["prices"], index=False)
    return paths
