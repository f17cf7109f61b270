"""Shared fixtures: tiny hand-built panels and seeded synthetic ones."""

import numpy as np
import pandas as pd
import pytest

from hiercast.data import build_panel, SalesWide
from hiercast.synthetic import SyntheticSpec, generate, make_calendar


def wide_from_values(rows, n_days):
    """rows: list of (item_id, dept_id, cat_id, store_id, state_id, values)."""
    frame = pd.DataFrame(
        [(r[0], r[1], r[2], r[3], r[4]) for r in rows],
        columns=["item_id", "dept_id", "cat_id", "store_id", "state_id"],
    )
    days = pd.DataFrame(np.stack([np.asarray(r[5]) for r in rows]),
                        columns=[f"d_{i}" for i in range(1, n_days + 1)])
    return SalesWide(frame=pd.concat([frame, days], axis=1), n_days=n_days)


def flat_prices(series, n_weeks, price=2.0, start_week=0):
    """Constant weekly prices for each (store, item) from start_week on."""
    rows = []
    for item, store in series:
        for w in range(start_week, n_weeks):
            rows.append((store, item, 11101 + 100 * (w // 52) + w % 52, price))
    return pd.DataFrame(rows, columns=["store_id", "item_id", "wm_yr_wk", "sell_price"])


def build_tiny_panel(values_by_item, n_days, price=2.0, price_start_weeks=None):
    """One store, one dept; values_by_item maps item suffix -> day values."""
    rows = []
    for suffix, vals in values_by_item.items():
        rows.append((f"FOODS_1_{suffix}", "FOODS_1", "FOODS", "CA_1", "CA", vals))
    wide = wide_from_values(rows, n_days)
    calendar = make_calendar(n_days + 28)
    n_weeks = int(np.ceil((n_days + 28) / 7))
    frames = []
    for suffix in values_by_item:
        start = 0 if price_start_weeks is None else price_start_weeks.get(suffix, 0)
        frames.append(flat_prices([(f"FOODS_1_{suffix}", "CA_1")], n_weeks, price, start))
    prices = pd.concat(frames, ignore_index=True)
    return build_panel(wide, calendar, prices)


@pytest.fixture
def toy_panel():
    """Two items in one store: a 15-series hierarchy (9 singleton levels + 3 x 2)."""
    rng = np.random.default_rng(11)
    n_days = 120
    return build_tiny_panel(
        {"001": rng.poisson(2.0, n_days), "002": rng.poisson(5.0, n_days)},
        n_days=n_days,
    )


@pytest.fixture(scope="session")
def synth_frames():
    spec = SyntheticSpec(n_stores=3, n_items=12, n_days=260, seed=5)
    return generate(spec)


@pytest.fixture(scope="session")
def synth_panel(synth_frames):
    sales, calendar, prices = synth_frames
    return build_panel(SalesWide(frame=sales, n_days=260), calendar, prices)
