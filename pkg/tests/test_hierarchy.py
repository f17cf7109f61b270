import numpy as np
import pandas as pd
import pytest

from hiercast.data import build_panel
from hiercast.errors import ValidationError
from hiercast.hierarchy import (
    LEVEL_SPECS, WeightTable, aggregate, build_hierarchy, compute_weights,
)
from hiercast.synthetic import make_calendar

from conftest import build_tiny_panel, flat_prices, wide_from_values


def brute_force_counts(series_frame):
    """Independent per-level distinct-key counts straight off the id columns."""
    counts = []
    for spec in LEVEL_SPECS:
        if not spec.key_fields:
            counts.append(1)
        else:
            counts.append(len(series_frame[list(spec.key_fields)].drop_duplicates()))
    return counts


class TestLevelSpecs:
    def test_full_scale_counts_match_published_hierarchy(self):
        counts = [s.full_scale_count for s in LEVEL_SPECS]
        assert counts == [1, 3, 10, 3, 7, 9, 21, 30, 70, 3049, 9147, 30490]
        assert sum(counts) == 42840

    def test_twelve_levels(self):
        assert [s.level for s in LEVEL_SPECS] == list(range(1, 13))


class TestBuildHierarchy:
    def test_collapsed_toy_counts(self, toy_panel):
        # 1 state, 1 store, 1 category, 1 dept, 2 items -> 1x9 + 2x3 = 15 series
        index = build_hierarchy(toy_panel)
        counts = [index.level_count(lvl) for lvl in range(1, 13)]
        assert counts == [1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2]
        assert index.total_series == 15

    def test_counts_match_brute_force_on_synthetic(self, synth_panel):
        index = build_hierarchy(synth_panel)
        got = [index.level_count(lvl) for lvl in range(1, 13)]
        assert got == brute_force_counts(synth_panel.series)

    def test_partition_property(self, synth_panel):
        index = build_hierarchy(synth_panel)
        n12 = len(index.series_keys)
        for lvl in range(1, 13):
            seen = np.zeros(n12, dtype=int)
            for key in index.keys[lvl]:
                seen[index.members(lvl, key)] += 1
            assert (seen == 1).all()

    def test_empty_panel_rejected(self, toy_panel):
        import dataclasses
        empty = dataclasses.replace(
            toy_panel,
            series=toy_panel.series.iloc[:0],
            sales=toy_panel.sales.iloc[:0],
            sales_values=toy_panel.sales_values[:0],
            first_active=toy_panel.first_active[:0],
        )
        with pytest.raises(ValidationError, match="empty"):
            build_hierarchy(empty)


class TestAggregate:
    def test_level_12_is_identity(self, toy_panel):
        index = build_hierarchy(toy_panel)
        vals = np.array([[3.0, 1.0], [4.0, 2.0]])
        keys, out = aggregate(vals, index, 12)
        assert keys == index.series_keys
        assert np.array_equal(out, vals)

    def test_two_items_sum_to_store_level(self, toy_panel):
        index = build_hierarchy(toy_panel)
        vals = np.array([[3.0], [4.0]])
        _, out = aggregate(vals, index, 3)
        assert out.shape == (1, 1)
        assert out[0, 0] == 7.0

    def test_level1_equals_column_sums(self, synth_panel):
        index = build_hierarchy(synth_panel)
        rng = np.random.default_rng(3)
        vals = rng.integers(0, 50, size=(len(index.series_keys), 28)).astype(float)
        _, out = aggregate(vals, index, 1)
        assert np.array_equal(out[0], vals.sum(axis=0))

    def test_every_level_matches_member_sum_oracle(self, synth_panel):
        index = build_hierarchy(synth_panel)
        rng = np.random.default_rng(4)
        vals = rng.integers(0, 20, size=(len(index.series_keys), 5)).astype(float)
        for lvl in range(1, 13):
            keys, out = aggregate(vals, index, lvl)
            for j, key in enumerate(keys):
                members = index.members(lvl, key)
                assert np.array_equal(out[j], vals[members].sum(axis=0))

    def test_linearity(self, synth_panel):
        index = build_hierarchy(synth_panel)
        rng = np.random.default_rng(5)
        a = rng.integers(0, 9, size=(len(index.series_keys), 4)).astype(float)
        b = rng.integers(0, 9, size=(len(index.series_keys), 4)).astype(float)
        for lvl in (1, 6, 11):
            _, out_ab = aggregate(a + b, index, lvl)
            _, out_a = aggregate(a, index, lvl)
            _, out_b = aggregate(b, index, lvl)
            assert np.array_equal(out_ab, out_a + out_b)

    def test_wrong_row_count_rejected(self, synth_panel):
        index = build_hierarchy(synth_panel)
        with pytest.raises(ValidationError, match="level-12"):
            aggregate(np.ones((3, 2)), index, 1)


class TestComputeWeights:
    def test_single_series_weight_is_one_twelfth(self):
        panel = build_tiny_panel({"001": np.ones(40)}, n_days=40)
        index = build_hierarchy(panel)
        w = compute_weights(panel, index, last_day=40)
        assert w[(12, "FOODS_1_001_CA_1")] == pytest.approx(1 / 12, abs=1e-15)

    def test_hand_oracle_30_and_10_dollars(self):
        # price 2.0; 15 units vs 5 units in the window -> dollars 30 and 10
        vals1 = np.zeros(56); vals1[-28:] = 0; vals1[-15:] = 1   # 15 units
        vals2 = np.zeros(56); vals2[-5:] = 1                     # 5 units
        panel = build_tiny_panel({"001": vals1, "002": vals2}, n_days=56, price=2.0)
        index = build_hierarchy(panel)
        w = compute_weights(panel, index, last_day=56)
        # oracle: (30/40) * (1/12) and (10/40) * (1/12)
        assert w[(12, "FOODS_1_001_CA_1")] == pytest.approx(30 / 40 / 12, abs=1e-15)
        assert w[(12, "FOODS_1_002_CA_1")] == pytest.approx(10 / 40 / 12, abs=1e-15)

    def test_zero_sales_series_weight_zero(self):
        vals1 = np.ones(40)
        vals2 = np.zeros(40)
        panel = build_tiny_panel({"001": vals1, "002": vals2}, n_days=40)
        index = build_hierarchy(panel)
        w = compute_weights(panel, index, last_day=40)
        assert w[(12, "FOODS_1_002_CA_1")] == 0.0

    def test_each_level_sums_to_one_twelfth(self, synth_panel):
        index = build_hierarchy(synth_panel)
        w = compute_weights(synth_panel, index, last_day=synth_panel.n_days)
        for lvl in range(1, 13):
            assert w.level_sum(lvl) == pytest.approx(1 / 12, abs=1e-13)
        assert w.total() == pytest.approx(1.0, abs=1e-12)

    def test_price_scaling_leaves_weights_unchanged(self, synth_panel):
        import dataclasses
        index = build_hierarchy(synth_panel)
        w1 = compute_weights(synth_panel, index, last_day=synth_panel.n_days)
        scaled_prices = synth_panel.prices.assign(sell_price=synth_panel.prices["sell_price"] * 3.0)
        scaled = dataclasses.replace(synth_panel, prices=scaled_prices, _price_weeks=None)
        w2 = compute_weights(scaled, index, last_day=synth_panel.n_days)
        for key, val in w1.values.items():
            assert w2[key] == pytest.approx(val, abs=1e-12)

    def test_sold_unpriced_unit_in_window_rejected(self):
        wide = wide_from_values(
            [("FOODS_1_001", "FOODS_1", "FOODS", "CA_1", "CA", np.ones(42))], 42)
        calendar = make_calendar(42 + 28)
        # priced only for the first 3 weeks; sales continue unpriced afterwards
        prices = flat_prices([("FOODS_1_001", "CA_1")], 3)
        panel = build_panel(wide, calendar, prices)
        index = build_hierarchy(panel)
        with pytest.raises(ValidationError, match="no sell price"):
            compute_weights(panel, index, last_day=42)

    def test_last_day_too_early_rejected(self, toy_panel):
        index = build_hierarchy(toy_panel)
        with pytest.raises(ValidationError, match="last_day"):
            compute_weights(toy_panel, index, last_day=10)


class TestWeightTableRoundTrip:
    def test_csv_round_trip(self, tmp_path, synth_panel):
        index = build_hierarchy(synth_panel)
        w = compute_weights(synth_panel, index, last_day=synth_panel.n_days)
        path = tmp_path / "weights.csv"
        w.to_csv(path)
        back = WeightTable.from_csv(path)
        assert back.values.keys() == w.values.keys()
        for key in w.values:
            assert back[key] == pytest.approx(w[key], rel=1e-12)

    def test_zeroed_exclusion(self):
        w = WeightTable({(12, "a"): 0.05, (12, "b"): 0.03})
        z = w.zeroed([(12, "a")])
        assert z[(12, "a")] == 0.0 and z[(12, "b")] == 0.03
        assert w[(12, "a")] == 0.05  # original untouched
