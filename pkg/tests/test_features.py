import numpy as np
import pandas as pd
import pytest

from hiercast.data import build_panel
from hiercast.errors import ValidationError
from hiercast.features import (
    FeatureSpec, PanelFeaturizer, SalesHistory, calendar_features,
    default_feature_specs, lag_features, lag_rolling_features, load_matrix,
    mean_target_encode, price_features, rolling_features, save_matrix,
)
from hiercast.synthetic import make_calendar

from conftest import build_tiny_panel, flat_prices, wide_from_values


def two_store_panel(vals_a, vals_b, n_days):
    rows = [
        ("FOODS_1_001", "FOODS_1", "FOODS", "CA_1", "CA", vals_a),
        ("HOBBIES_1_001", "HOBBIES_1", "HOBBIES", "TX_1", "TX", vals_b),
    ]
    wide = wide_from_values(rows, n_days)
    calendar = make_calendar(n_days + 28)
    n_weeks = int(np.ceil((n_days + 28) / 7))
    prices = flat_prices([("FOODS_1_001", "CA_1"), ("HOBBIES_1_001", "TX_1")], n_weeks)
    return build_panel(wide, calendar, prices)


class TestMeanTargetEncode:
    def test_single_category_mean(self):
        panel = build_tiny_panel({"001": [2, 3, 2, 3]}, n_days=4)
        enc, gmean = mean_target_encode(panel, "store_id", (1, 4))
        assert enc["CA_1"] == pytest.approx(2.5)
        assert gmean == pytest.approx(2.5)

    def test_two_stores_distinct_means(self):
        panel = two_store_panel(np.ones(10), 3 * np.ones(10), 10)
        enc, _ = mean_target_encode(panel, "store_id", (1, 10))
        assert enc["CA_1"] == pytest.approx(1.0)
        assert enc["TX_1"] == pytest.approx(3.0)

    def test_absent_category_falls_back_to_global_mean(self):
        # second item released on day 15 (week 3): absent from train range (1, 14)
        panel = build_tiny_panel(
            {"001": [2] * 28, "002": [9] * 28}, n_days=28,
            price_start_weeks={"001": 0, "002": 2},
        )
        enc, gmean = mean_target_encode(panel, "item_id", (1, 14))
        assert "FOODS_1_002" not in enc
        assert gmean == pytest.approx(2.0)
        fz = PanelFeaturizer(panel).fit((1, 14))
        mat = fz.training_matrix((15, 28))
        col = mat.column("tmean_item_id")
        late_rows = mat.series_idx == 1
        assert np.allclose(col[late_rows], gmean)

    def test_purity_only_train_rows_matter(self):
        panel = build_tiny_panel({"001": list(range(1, 21))}, n_days=20)
        enc1, g1 = mean_target_encode(panel, "store_id", (1, 10))
        perturbed = panel.sales_values.copy()
        perturbed[:, 10:] = 999.0
        import dataclasses
        panel2 = dataclasses.replace(panel, sales_values=perturbed)
        enc2, g2 = mean_target_encode(panel2, "store_id", (1, 10))
        assert enc1 == enc2 and g1 == g2


class TestPriceFeatures:
    def test_constant_price(self):
        panel = build_tiny_panel({"001": np.ones(14)}, n_days=14, price=2.0)
        vec = price_features(panel, "FOODS_1_001_CA_1", 10)
        assert vec.tolist() == [2.0, 2.0, 2.0, 2.0, 0.0, 1.0]

    def test_two_week_prices_no_lookahead(self):
        wide = wide_from_values(
            [("FOODS_1_001", "FOODS_1", "FOODS", "CA_1", "CA", np.ones(14))], 14)
        calendar = make_calendar(14 + 28)
        rows = [("CA_1", "FOODS_1_001", 11101, 2.0), ("CA_1", "FOODS_1_001", 11102, 3.0)]
        for w in range(2, 6):
            rows.append(("CA_1", "FOODS_1_001", 11101 + w, 3.0))
        prices = pd.DataFrame(rows, columns=["store_id", "item_id", "wm_yr_wk", "sell_price"])
        panel = build_panel(wide, calendar, prices)
        # day 10 is in week 2: stats over {2, 3}
        vec = price_features(panel, "FOODS_1_001_CA_1", 10)
        assert vec[0] == 3.0                      # current
        assert vec[1] == 3.0 and vec[2] == 2.0    # max, min
        assert vec[3] == pytest.approx(2.5)       # mean
        assert vec[4] == pytest.approx(0.5)       # population std over {2, 3}
        assert vec[5] == 2.0                      # n_unique
        # day 3 is in week 1: stats over {2} only
        vec1 = price_features(panel, "FOODS_1_001_CA_1", 3)
        assert vec1.tolist() == [2.0, 2.0, 2.0, 2.0, 0.0, 1.0]


class TestCalendarFeatures:
    def test_snap_own_state(self):
        panel = two_store_panel(np.ones(40), np.ones(40), 40)
        # find a day that is snap for CA but not TX: day-of-month 2 (CA yes, TX no)
        cal = panel.calendar
        snap_ca_only = cal[(cal["snap_CA"] == 1) & (cal["snap_TX"] == 0)]["d_index"].iloc[0]
        ca = calendar_features(panel, "FOODS_1_001_CA_1", int(snap_ca_only))
        tx = calendar_features(panel, "HOBBIES_1_001_TX_1", int(snap_ca_only))
        assert ca["cal_snap_own"] == 1.0
        assert tx["cal_snap_own"] == 0.0
        assert ca["cal_snap_CA"] == 1.0 and tx["cal_snap_CA"] == 1.0

    def test_event_classes(self):
        panel = build_tiny_panel({"001": np.ones(40)}, n_days=40)
        cal = panel.calendar
        sporting = cal[cal["event_type_1"] == "Sporting"]
        assert len(sporting) > 0
        d = int(sporting["d_index"].iloc[0])
        feats = calendar_features(panel, "FOODS_1_001_CA_1", d)
        assert feats["cal_event_1"] == 1.0   # Sporting class code
        plain = cal[cal["event_type_1"].isna()]["d_index"].iloc[0]
        feats0 = calendar_features(panel, "FOODS_1_001_CA_1", int(plain))
        assert feats0["cal_event_1"] == 0.0


class TestLagFeatures:
    def test_day_43_first_lag_reads_day_14(self):
        vals = np.arange(1, 61, dtype=float)   # value at day t equals t
        panel = build_tiny_panel({"001": vals}, n_days=60)
        vec = lag_features(panel, "FOODS_1_001_CA_1", 43)
        assert vec[0] == 14.0                  # day 43 - 29
        assert vec[13] == 1.0                  # day 43 - 42

    def test_constant_series(self):
        panel = build_tiny_panel({"001": 4 * np.ones(60)}, n_days=60)
        vec = lag_features(panel, "FOODS_1_001_CA_1", 55)
        assert np.allclose(vec, 4.0)

    def test_day_30_boundary(self):
        vals = np.arange(1, 61, dtype=float)
        panel = build_tiny_panel({"001": vals}, n_days=60)
        vec = lag_features(panel, "FOODS_1_001_CA_1", 30)
        assert vec[0] == 1.0                   # lag 29 -> day 1
        assert np.isnan(vec[1:]).all()         # lags 30..42 reach before day 1


class TestRollingFeatures:
    def test_constant_series(self):
        panel = build_tiny_panel({"001": 3 * np.ones(80)}, n_days=80)
        vec = rolling_features(panel, "FOODS_1_001_CA_1", 70, windows=(7, 14))
        assert np.allclose(vec, [3.0, 0.0, 3.0, 0.0])

    def test_linear_ramp_window_two(self):
        vals = np.arange(1, 81, dtype=float)
        panel = build_tiny_panel({"001": vals}, n_days=80)
        vec = rolling_features(panel, "FOODS_1_001_CA_1", 50, windows=(2,))
        # window = days [21, 22]; mean 21.5, population std 0.5
        assert vec[0] == pytest.approx(21.5)
        assert vec[1] == pytest.approx(0.5)

    def test_window_before_first_active_missing(self):
        panel = build_tiny_panel({"001": np.ones(80)}, n_days=80,
                                 price_start_weeks={"001": 2})   # active from day 15
        vec = rolling_features(panel, "FOODS_1_001_CA_1", 45, windows=(7,))
        # window [11, 17] starts before day 15 -> missing
        assert np.isnan(vec).all()
        vec_ok = rolling_features(panel, "FOODS_1_001_CA_1", 49, windows=(7,))
        assert not np.isnan(vec_ok).any()


class TestLagRollingFeatures:
    def test_lag_28_reduces_to_rolling(self):
        rng = np.random.default_rng(12)
        panel = build_tiny_panel({"001": rng.poisson(3, 90)}, n_days=90)
        a = lag_rolling_features(panel, "FOODS_1_001_CA_1", 70, lag=28, windows=(7, 14))
        b = rolling_features(panel, "FOODS_1_001_CA_1", 70, windows=(7, 14))
        assert np.array_equal(a, b)

    def test_lag_35_window_7_on_ramp(self):
        vals = np.arange(1, 91, dtype=float)
        panel = build_tiny_panel({"001": vals}, n_days=90)
        vec = lag_rolling_features(panel, "FOODS_1_001_CA_1", 60, lag=35, windows=(7,))
        # window = days [19, 25]; mean 22
        assert vec[0] == pytest.approx(22.0)

    def test_lag_beyond_day_missing(self):
        panel = build_tiny_panel({"001": np.ones(90)}, n_days=90)
        vec = lag_rolling_features(panel, "FOODS_1_001_CA_1", 30, lag=40, windows=(7,))
        assert np.isnan(vec).all()


class TestAssembleMatrix:
    def test_row_count_equals_active_pairs(self, synth_panel):
        fz = PanelFeaturizer(synth_panel).fit((1, 200))
        mat = fz.training_matrix((1, 200))
        expected = int(np.sum(np.maximum(200 - synth_panel.first_active + 1, 0)))
        assert mat.n_rows == expected
        assert mat.values.shape == (expected, len(mat.columns))
        assert not np.isnan(mat.target).any()

    def test_short_history_has_missing_markers(self):
        panel = build_tiny_panel({"001": np.ones(10)}, n_days=10)
        specs = [FeatureSpec(f"lag_{o}", "lag", (o,)) for o in range(29, 43)]
        fz = PanelFeaturizer(panel, specs).fit((1, 10))
        mat = fz.training_matrix()
        assert mat.n_rows == 10
        assert np.isnan(mat.values).all()   # no day reaches 29 back

    def test_no_lookahead_on_sales_features(self, synth_panel):
        import dataclasses
        t = 150
        fz = PanelFeaturizer(synth_panel).fit((1, synth_panel.n_days))
        hist1 = SalesHistory(synth_panel.sales_values)
        row1 = fz.day_matrix(t, hist1)
        perturbed = synth_panel.sales_values.copy()
        perturbed[:, t - 1:] += 7.0          # alter day >= t
        hist2 = SalesHistory(perturbed)
        row2 = fz.day_matrix(t, hist2)
        sales_cols = [i for i, s in enumerate(fz.specs)
                      if s.group in ("lag", "rolling", "lag_rolling")]
        assert np.array_equal(row1.values[:, sales_cols], row2.values[:, sales_cols],
                              equal_nan=True)

    def test_determinism(self, synth_panel):
        m1 = PanelFeaturizer(synth_panel).fit((1, 150)).training_matrix((100, 150))
        m2 = PanelFeaturizer(synth_panel).fit((1, 150)).training_matrix((100, 150))
        assert np.array_equal(m1.values, m2.values, equal_nan=True)
        assert m1.schema_hash == m2.schema_hash

    def test_day_beyond_calendar_rejected(self, synth_panel):
        fz = PanelFeaturizer(synth_panel).fit((1, 100))
        hist = SalesHistory(synth_panel.sales_values, capacity=4000)
        with pytest.raises(ValidationError, match="calendar"):
            fz.day_matrix(len(synth_panel.calendar) + 1, hist)

    def test_schema_hash_reflects_train_range(self, synth_panel):
        h1 = PanelFeaturizer(synth_panel).fit((1, 100)).schema_hash
        h2 = PanelFeaturizer(synth_panel).fit((1, 150)).schema_hash
        assert h1 != h2


class TestSalesHistory:
    def test_append_matches_precomputed(self):
        rng = np.random.default_rng(13)
        full = rng.poisson(2, (4, 30)).astype(float)
        incremental = SalesHistory(full[:, :20], capacity=30)
        for d in range(20, 30):
            incremental.append_day(full[:, d])
        whole = SalesHistory(full)
        assert np.array_equal(incremental.window_sum(5, 28), whole.window_sum(5, 28))
        assert np.array_equal(incremental.window_sq_sum(11, 30), whole.window_sq_sum(11, 30))
        assert np.array_equal(incremental.day(25), whole.day(25))


class TestMatrixCache:
    def test_round_trip(self, tmp_path, synth_panel):
        fz = PanelFeaturizer(synth_panel).fit((1, 120))
        mat = fz.training_matrix((100, 120))
        path = tmp_path / "matrix.npz"
        save_matrix(mat, path)
        back = load_matrix(path)
        assert back.columns == mat.columns
        assert np.array_equal(back.values, mat.values, equal_nan=True)
        assert np.array_equal(back.target, mat.target)
        assert back.schema_hash == mat.schema_hash
        assert back.cat_columns == mat.cat_columns

    def test_tampered_cache_rejected(self, tmp_path, synth_panel):
        fz = PanelFeaturizer(synth_panel).fit((1, 120))
        mat = fz.training_matrix((110, 120))
        path = tmp_path / "matrix.npz"
        save_matrix(mat, path)
        data = dict(np.load(path))
        data["values"] = data["values"] + 1.0
        np.savez(path, **data)
        with pytest.raises(ValidationError, match="digest"):
            load_matrix(path)


class TestDefaultSpecs:
    def test_unique_names_and_groups(self):
        specs = default_feature_specs()
        names = [s.name for s in specs]
        assert len(names) == len(set(names))
        groups = {s.group for s in specs}
        assert groups == {"categorical", "price", "calendar", "lag", "rolling", "lag_rolling"}

    def test_lag_offsets_cover_29_to_42(self):
        specs = [s for s in default_feature_specs() if s.group == "lag"]
        assert [s.params[0] for s in specs] == list(range(29, 43))
