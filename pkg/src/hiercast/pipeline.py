"""End-to-end orchestration: prepare -> backtest -> forecast -> quantiles -> evaluate.

Every artifact lands under a run directory named by the config digest, so a
rerun with the same config and seeds reproduces every file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .blend import BlendSpec, exponential_smooth, geometric_blend
from .config import PipelineConfig
from .data import PanelDataset, SalesWide, build_panel, load_calendar, load_prices, load_sales
from .errors import ValidationError
from .features import PanelFeaturizer, load_matrix, save_matrix, specs_from_config
from .forecast import (
    ForecastGrid, MlpGroup, PerStoreGbdtGroup, PooledGbdtGroup, make_splits,
    recursive_forecast,
)
from .gbdt import GradientBoostedTrees, fit_per_store
from .hierarchy import HierarchyIndex, aggregate, build_hierarchy, compute_weights
from .metrics import QUANTILE_LEVELS, ScoreReport, evaluate_point, evaluate_quantiles
from .mlp import EmbeddingMLPRegressor
from .uncertainty import (
    DAILY_LONG_WINDOW, DAILY_SHORT_WINDOW, WEEKLY_LONG_WINDOW, WEEKLY_SHORT_WINDOW,
    QuantileFactorTable, aggregate_stat_quantiles, apply_factors, assemble_submission,
    correct_level11, correct_level12, optimize_factors, statistical_quantiles,
)
from .validation import require

logger = logging.getLogger(__name__)

PANEL_CACHE_VERSION = 1
HORIZON = 28


# ---------------------------------------------------------------------------
# Caching
# ---------------------------------------------------------------------------

def input_digest(paths: dict) -> str:
    h = hashlib.sha256()
    for name in ("sales", "calendar", "prices"):
        h.update(Path(paths[name]).read_bytes())
    return h.hexdigest()[:16]


def _frame_bytes(frame: pd.DataFrame) -> np.ndarray:
    return np.frombuffer(frame.to_csv(index=False).encode(), dtype=np.uint8)


def save_panel_cache(panel: PanelDataset, path, digest: str) -> None:
    arrays = {
        "sales_values": panel.sales_values,
        "first_active": panel.first_active,
        "series_csv": _frame_bytes(panel.series),
        "calendar_csv": _frame_bytes(panel.calendar),
        "prices_csv": _frame_bytes(panel.prices),
    }
    content = hashlib.sha256()
    for key in sorted(arrays):
        content.update(np.ascontiguousarray(arrays[key]).tobytes())
    meta = json.dumps({
        "version": PANEL_CACHE_VERSION,
        "input_digest": digest,
        "n_days": panel.n_days,
        "content_digest": content.hexdigest(),
    }, sort_keys=True)
    np.savez(path, meta=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)


def load_panel_cache(path, expect_digest: str) -> PanelDataset:
    import io

    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != PANEL_CACHE_VERSION:
            raise ValidationError(f"panel cache {path}: unsupported version")
        if meta.get("input_digest") != expect_digest:
            raise ValidationError(f"panel cache {path}: input files changed")
        arrays = {k: z[k] for k in
                  ("sales_values", "first_active", "series_csv", "calendar_csv", "prices_csv")}
    content = hashlib.sha256()
    for key in sorted(arrays):
        content.update(np.ascontiguousarray(arrays[key]).tobytes())
    if content.hexdigest() != meta["content_digest"]:
        raise ValidationError(f"panel cache {path}: content digest mismatch (corrupted cache)")

    series = pd.read_csv(io.BytesIO(bytes(arrays["series_csv"])), float_precision="round_trip")
    calendar = pd.read_csv(io.BytesIO(bytes(arrays["calendar_csv"])), float_precision="round_trip")
    prices = pd.read_csv(io.BytesIO(bytes(arrays["prices_csv"])), float_precision="round_trip")
    n_days = int(meta["n_days"])
    values = arrays["sales_values"]
    first_active = arrays["first_active"]
    counts = n_days - first_active + 1
    series_idx = np.repeat(np.arange(len(series)), counts)
    d_index = np.concatenate([np.arange(fa, n_days + 1) for fa in first_active])
    long = pd.DataFrame({
        "series_key": pd.Categorical.from_codes(series_idx, categories=series["series_key"]),
        "d_index": d_index,
        "y": values[series_idx, d_index - 1],
    })
    return PanelDataset(series=series, sales=long, calendar=calendar, prices=prices,
                        n_days=n_days, sales_values=values, first_active=first_active)


def load_or_build_panel(config: PipelineConfig, run_dir: Path) -> PanelDataset:
    paths = config.data_paths()
    for name, p in paths.items():
        require(p.exists(), f"data.{name}: file {p} does not exist")
    digest = input_digest(paths)
    cache = run_dir / "cache" / "panel.npz"
    if cache.exists():
        try:
            panel = load_panel_cache(cache, digest)
            logger.info("panel cache hit (%s)", cache)
            return panel
        except Exception as exc:   # noqa: BLE001 - any unreadable cache is rebuilt
            logger.warning("panel cache unusable (%s); rebuilding", exc)
    panel = build_panel(load_sales(paths["sales"]), load_calendar(paths["calendar"]),
                        load_prices(paths["prices"]))
    cache.parent.mkdir(parents=True, exist_ok=True)
    save_panel_cache(panel, cache, digest)
    return panel


def load_or_build_matrix(featurizer: PanelFeaturizer, day_range, path: Path):
    if path.exists():
        try:
            matrix = load_matrix(path)
            if matrix.schema_hash == featurizer.schema_hash:
                logger.info("feature cache hit (%s)", path)
                return matrix
            logger.warning("feature cache %s built under a different schema; rebuilding", path)
        except Exception as exc:   # noqa: BLE001 - any unreadable cache is rebuilt
            logger.warning("feature cache unusable (%s); rebuilding", exc)
    matrix = featurizer.training_matrix(day_range)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(matrix, path)
    return matrix


def write_manifest(run_dir: Path, command: str, config: PipelineConfig) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": __version__,
        "config_digest": config.digest(),
        "seed": config.seed,
        "config": config.snapshot(),
    }
    with open(run_dir / f"manifest_{command}.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1, default=str)


# ---------------------------------------------------------------------------
# Model group fitting and forecasting
# ---------------------------------------------------------------------------

def fit_groups(config: PipelineConfig, panel: PanelDataset, matrix, split_index: int):
    """Fit every enabled model group on one training matrix."""
    cat_idx = {matrix.columns.index(name): card
               for name, card in matrix.cat_columns.items()}
    store_of_series = panel.series["store_id"].to_numpy()
    groups = {}
    for name in config.groups:
        seed = config.group_seed(name, split_index)
        cfg = config["models"][name]
        logger.info("fitting group %s (seed %d)", name, seed)
        if name == "gbdt_pooled":
            model = GradientBoostedTrees(**cfg, random_state=seed)
            model.fit(matrix.values, matrix.target, schema_hash=matrix.schema_hash)
            groups[name] = PooledGbdtGroup(name, model)
        elif name == "gbdt_per_store":
            stores_rows = store_of_series[matrix.series_idx]
            models = fit_per_store(
                matrix.values, matrix.target, stores_rows, cfg["params"],
                n_estimators_by_store=cfg.get("n_estimators_by_store") or None,
                schema_hash=matrix.schema_hash, random_state=seed)
            groups[name] = PerStoreGbdtGroup(name, models, store_of_series)
        elif name == "mlp_windowed":
            train_end = int(matrix.d_index.max())
            lo = max(train_end - int(cfg["window_days"]) + 1, 1)
            rows = matrix.d_index >= lo
            models = []
            for k, preset in enumerate(cfg["hidden_sizes_presets"]):
                mlp = EmbeddingMLPRegressor(
                    hidden_sizes=tuple(preset), embedding_dim=cfg["embedding_dim"],
                    objective="squared_error", epochs=cfg["epochs"],
                    batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
                    lr_decay=cfg["lr_decay"], snapshots_to_keep=cfg["snapshots_to_keep"],
                    random_state=seed + k)
                mlp.fit(matrix.values[rows], matrix.target[rows],
                        categorical=cat_idx, schema_hash=matrix.schema_hash)
                models.append(mlp)
            groups[name] = MlpGroup(name, models)
        elif name == "mlp_tweedie":
            mlp = EmbeddingMLPRegressor(
                hidden_sizes=tuple(cfg["hidden_sizes"]), embedding_dim=cfg["embedding_dim"],
                objective="tweedie", tweedie_variance_power=cfg["tweedie_variance_power"],
                epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                learning_rate=cfg["learning_rate"], lr_decay=cfg["lr_decay"],
                snapshots_to_keep=cfg["snapshots_to_keep"], random_state=seed)
            mlp.fit(matrix.values, matrix.target, categorical=cat_idx,
                    schema_hash=matrix.schema_hash)
            groups[name] = MlpGroup(name, [mlp])
    return groups


def blend_spec(config: PipelineConfig) -> BlendSpec:
    main, last = config.blend_weights()
    return BlendSpec(main, last)


def smooth_for_accuracy(values: np.ndarray, config: PipelineConfig, panel: PanelDataset,
                        start_day: int) -> np.ndarray:
    s = config["smoothing"]
    if s["mode"] == "with_history":
        warmup = int(s["warmup_days"])
        lo = max(start_day - warmup, 1)
        history = panel.sales_values[:, lo - 1:start_day - 1]
        return exponential_smooth(values, float(s["alpha"]), trailing_history=history)
    return exponential_smooth(values, float(s["alpha"]))


def forecast_all_groups(config, panel, featurizer, groups, start_day, h=HORIZON):
    grids = {}
    for name, group in groups.items():
        logger.info("recursive forecast: group %s from day %d", name, start_day)
        grids[name] = recursive_forecast(group, featurizer, start_day, h)
    return grids


def blended_forecast(config, panel, grids, start_day, apply_accuracy_smoothing=True):
    spec = blend_spec(config)
    blended = geometric_blend({n: g.values for n, g in grids.items()}, spec)
    if apply_accuracy_smoothing and config["smoothing"]["apply_to_accuracy"]:
        blended = smooth_for_accuracy(blended, config, panel, start_day)
    return ForecastGrid(12, panel.series_keys, start_day, blended)


# ---------------------------------------------------------------------------
# Scoring helpers
# ---------------------------------------------------------------------------

def point_level_arrays(panel, index, train_end, valid_days, forecast_values):
    hist12 = panel.sales_values[:, :train_end]
    act12 = panel.sales_values[:, valid_days[0] - 1:valid_days[1]]
    per_level = {}
    for level in range(1, 13):
        keys, hist = aggregate(hist12, index, level)
        _, act = aggregate(act12, index, level)
        _, fc = aggregate(forecast_values, index, level)
        per_level[level] = (keys, hist, act, fc)
    return per_level


def quantile_level_arrays(panel, index, train_end, valid_days, qgrids):
    hist12 = panel.sales_values[:, :train_end]
    act12 = panel.sales_values[:, valid_days[0] - 1:valid_days[1]]
    per_level = {}
    for level in range(1, 13):
        keys, hist = aggregate(hist12, index, level)
        _, act = aggregate(act12, index, level)
        grid = qgrids[level]
        require(grid.keys == keys, f"level {level}: quantile grid keys mismatch")
        per_level[level] = (keys, hist, act, grid.values)
    return per_level


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def run_prepare(config: PipelineConfig) -> dict:
    run_dir = config.run_dir()
    write_manifest(run_dir, "prepare", config)
    panel = load_or_build_panel(config, run_dir)
    specs = specs_from_config(config["features"])
    splits = make_splits(panel.n_days, config["splits"]["strict_printed_split1"])
    paths = {"panel": str(run_dir / "cache" / "panel.npz")}
    for split in splits:
        featurizer = PanelFeaturizer(panel, specs).fit(split.train_days)
        path = run_dir / "cache" / f"features_{split.name}.npz"
        load_or_build_matrix(featurizer, split.train_days, path)
        paths[f"features_{split.name}"] = str(path)
    featurizer = PanelFeaturizer(panel, specs).fit((1, panel.n_days))
    path = run_dir / "cache" / "features_full.npz"
    load_or_build_matrix(featurizer, (1, panel.n_days), path)
    paths["features_full"] = str(path)
    logger.info("prepare complete: %d cache artifacts under %s", len(paths), run_dir)
    return paths


def _backtest_one_split(config, panel, index, specs, split, split_index, run_dir):
    featurizer = PanelFeaturizer(panel, specs).fit(split.train_days)
    matrix = load_or_build_matrix(featurizer, split.train_days,
                                  run_dir / "cache" / f"features_{split.name}.npz")
    groups = fit_groups(config, panel, matrix, split_index)
    grids = forecast_all_groups(config, panel, featurizer, groups, split.valid_days[0])
    blend_grid = blended_forecast(config, panel, grids, split.valid_days[0])

    weights = compute_weights(panel, index, split.train_end)
    trim = config["metrics"]["trim_leading_zeros"]
    scores = {}
    reports = {}
    for name, grid in grids.items():
        per_level = point_level_arrays(panel, index, split.train_end, split.valid_days,
                                       grid.values)
        reports[name] = evaluate_point(per_level, weights, trim)
        scores[name] = reports[name].total
    per_level = point_level_arrays(panel, index, split.train_end, split.valid_days,
                                   blend_grid.values)
    reports["ensemble"] = evaluate_point(per_level, weights, trim)
    scores["ensemble"] = reports["ensemble"].total

    out = run_dir / "backtest"
    out.mkdir(parents=True, exist_ok=True)
    write_forecast_csv(blend_grid, out / f"forecast_{split.name}.csv")
    reports["ensemble"].to_csv(out / f"report_{split.name}.csv")
    return scores, reports


def run_backtest(config: PipelineConfig) -> pd.DataFrame:
    run_dir = config.run_dir()
    write_manifest(run_dir, "backtest", config)
    panel = load_or_build_panel(config, run_dir)
    index = build_hierarchy(panel)
    specs = specs_from_config(config["features"])
    splits = make_splits(panel.n_days, config["splits"]["strict_printed_split1"])
    require(len(splits) > 0, "panel too short for any validation split")

    rows = {}
    for i, split in enumerate(splits):
        logger.info("backtest %s: train %s validate %s", split.name,
                    split.train_days, split.valid_days)
        scores, _ = _backtest_one_split(config, panel, index, specs, split, i, run_dir)
        rows[split.name] = scores

    frame = pd.DataFrame(rows).T
    frame = frame[[*config.groups, "ensemble"]]
    summary = pd.DataFrame({c: [frame[c].mean(), frame[c].std(ddof=0)] for c in frame.columns},
                           index=["mean", "std"])
    report = pd.concat([frame, summary])
    report.index.name = "split"
    report.to_csv(run_dir / "backtest_scores.csv")
    logger.info("backtest scores written to %s", run_dir / "backtest_scores.csv")
    return report


def write_forecast_csv(grid: ForecastGrid, path) -> None:
    frame = pd.DataFrame(grid.values, columns=[f"F{t}" for t in range(1, grid.horizon + 1)])
    frame.insert(0, "id", grid.keys)
    frame.to_csv(path, index=False)


def read_forecast_csv(path, panel: PanelDataset, start_day: int) -> ForecastGrid:
    frame = pd.read_csv(path, float_precision="round_trip")
    require("id" in frame.columns, f"forecast file {path} lacks an id column")
    require(len(frame) == panel.n_series_level12,
            f"forecast file {path}: expected {panel.n_series_level12} series rows")
    frame = frame.set_index("id").loc[panel.series_keys]
    fcols = [c for c in frame.columns if c.startswith("F")]
    return ForecastGrid(12, panel.series_keys, start_day, frame[fcols].to_numpy())


FULL_TRAIN_SPLIT_INDEX = 99    # seed namespace for the full-data fit


def save_groups(groups, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    layout = {}
    for name, group in groups.items():
        if isinstance(group, PooledGbdtGroup):
            path = out_dir / f"{name}.npz"
            group.model.save(path)
            layout[name] = {"kind": "gbdt_pooled", "files": [path.name]}
        elif isinstance(group, PerStoreGbdtGroup):
            sub = out_dir / name
            sub.mkdir(exist_ok=True)
            files = {}
            for store, model in group.models.items():
                model.save(sub / f"{store}.npz")
                files[store] = f"{name}/{store}.npz"
            layout[name] = {"kind": "gbdt_per_store", "files": files}
        else:
            sub = out_dir / name
            sub.mkdir(exist_ok=True)
            files = []
            for k, model in enumerate(group.models):
                model.save(sub / f"{k}.npz")
                files.append(f"{name}/{k}.npz")
            layout[name] = {"kind": "mlp_group", "files": files}
    with open(out_dir / "layout.json", "w") as fh:
        json.dump(layout, fh, sort_keys=True, indent=1)


def load_groups(panel, out_dir: Path):
    with open(out_dir / "layout.json") as fh:
        layout = json.load(fh)
    store_of_series = panel.series["store_id"].to_numpy()
    groups = {}
    for name, entry in layout.items():
        if entry["kind"] == "gbdt_pooled":
            groups[name] = PooledGbdtGroup(
                name, GradientBoostedTrees.load(out_dir / entry["files"][0]))
        elif entry["kind"] == "gbdt_per_store":
            models = {store: GradientBoostedTrees.load(out_dir / rel)
                      for store, rel in entry["files"].items()}
            groups[name] = PerStoreGbdtGroup(name, models, store_of_series)
        else:
            models = [EmbeddingMLPRegressor.load(out_dir / rel) for rel in entry["files"]]
            groups[name] = MlpGroup(name, models)
    return groups


def run_train(config: PipelineConfig) -> Path:
    """Full training on every observed day; fitted model groups are persisted."""
    run_dir = config.run_dir()
    write_manifest(run_dir, "train", config)
    panel = load_or_build_panel(config, run_dir)
    specs = specs_from_config(config["features"])
    featurizer = PanelFeaturizer(panel, specs).fit((1, panel.n_days))
    matrix = load_or_build_matrix(featurizer, (1, panel.n_days),
                                  run_dir / "cache" / "features_full.npz")
    groups = fit_groups(config, panel, matrix, split_index=FULL_TRAIN_SPLIT_INDEX)
    models_dir = run_dir / "models"
    save_groups(groups, models_dir)
    logger.info("trained %d model groups into %s", len(groups), models_dir)
    return models_dir


def run_forecast(config: PipelineConfig) -> Path:
    run_dir = config.run_dir()
    write_manifest(run_dir, "forecast", config)
    panel = load_or_build_panel(config, run_dir)
    specs = specs_from_config(config["features"])
    featurizer = PanelFeaturizer(panel, specs).fit((1, panel.n_days))
    models_dir = run_dir / "models"
    if (models_dir / "layout.json").exists():
        groups = load_groups(panel, models_dir)
        if set(groups) != set(config.groups):
            logger.warning("persisted models cover %s but config wants %s; refitting",
                           sorted(groups), sorted(config.groups))
            groups = None
        else:
            logger.info("loaded persisted model groups from %s", models_dir)
    else:
        groups = None
    if groups is None:
        matrix = load_or_build_matrix(featurizer, (1, panel.n_days),
                                      run_dir / "cache" / "features_full.npz")
        groups = fit_groups(config, panel, matrix, split_index=FULL_TRAIN_SPLIT_INDEX)
    grids = forecast_all_groups(config, panel, featurizer, groups, panel.n_days + 1)
    blend_grid = blended_forecast(config, panel, grids, panel.n_days + 1)
    path = run_dir / "forecast_level12.csv"
    write_forecast_csv(blend_grid, path)
    logger.info("level-12 forecast written to %s", path)
    return path


def _median_for_uncertainty(config, panel, grid: ForecastGrid) -> ForecastGrid:
    """Uncertainty always works from the smoothed median."""
    if config["smoothing"]["apply_to_accuracy"]:
        return grid
    smoothed = smooth_for_accuracy(grid.values, config, panel, grid.start_day)
    return ForecastGrid(12, grid.keys, grid.start_day, smoothed)


def _fit_factor_table(config, panel, index, specs, run_dir) -> QuantileFactorTable:
    splits = make_splits(panel.n_days, config["splits"]["strict_printed_split1"])
    require(len(splits) > 0, "panel too short to fit quantile factors")
    split = splits[0]
    blend_path = run_dir / "backtest" / f"forecast_{split.name}.csv"
    if blend_path.exists():
        blend_grid = read_forecast_csv(blend_path, panel, split.valid_days[0])
        logger.info("factor fit reuses backtest forecast %s", blend_path)
    else:
        logger.info("factor fit: no backtest forecast found; training %s now", split.name)
        featurizer = PanelFeaturizer(panel, specs).fit(split.train_days)
        matrix = load_or_build_matrix(featurizer, split.train_days,
                                      run_dir / "cache" / f"features_{split.name}.npz")
        groups = fit_groups(config, panel, matrix, split_index=0)
        grids = forecast_all_groups(config, panel, featurizer, groups, split.valid_days[0])
        blend_grid = blended_forecast(config, panel, grids, split.valid_days[0])
        run_dir.joinpath("backtest").mkdir(parents=True, exist_ok=True)
        write_forecast_csv(blend_grid, blend_path)
    median = _median_for_uncertainty(config, panel, blend_grid)

    median_grids, actuals, histories = {}, {}, {}
    hist12 = panel.sales_values[:, :split.train_end]
    act12 = panel.sales_values[:, split.valid_days[0] - 1:split.valid_days[1]]
    for level in range(1, 13):
        keys, med = aggregate(median.values, index, level)
        median_grids[level] = ForecastGrid(level, keys, split.valid_days[0], med)
        _, actuals[level] = aggregate(act12, index, level)
        _, histories[level] = aggregate(hist12, index, level)
    weights = compute_weights(panel, index, split.train_end)
    return optimize_factors(
        median_grids, actuals, histories, weights,
        symmetric_levels=tuple(config["uncertainty"]["symmetric_levels"]),
        tol=float(config["uncertainty"]["fit_tolerance"]),
        trim_leading=config["metrics"]["trim_leading_zeros"])


def run_quantiles(config: PipelineConfig) -> Path:
    run_dir = config.run_dir()
    write_manifest(run_dir, "quantiles", config)
    panel = load_or_build_panel(config, run_dir)
    index = build_hierarchy(panel)
    specs = specs_from_config(config["features"])

    point_path = run_dir / "forecast_level12.csv"
    require(point_path.exists(),
            f"{point_path} not found: run the forecast command before quantiles")
    point = read_forecast_csv(point_path, panel, panel.n_days + 1)
    median12 = _median_for_uncertainty(config, panel, point)

    source = config["uncertainty"]["factor_source"]
    if source == "reference":
        table = QuantileFactorTable.reference()
    elif source == "file":
        table = QuantileFactorTable.from_csv(config["uncertainty"]["factor_file"])
    else:
        table = _fit_factor_table(config, panel, index, specs, run_dir)
    table.to_csv(run_dir / "quantile_factors.csv")

    median_grids = {}
    for level in range(1, 13):
        keys, med = aggregate(median12.values, index, level)
        median_grids[level] = ForecastGrid(level, keys, median12.start_day, med)
    qgrids = apply_factors(median_grids, table)

    daily_long = statistical_quantiles(panel, DAILY_LONG_WINDOW)
    daily_short = statistical_quantiles(panel, DAILY_SHORT_WINDOW)
    weekly_long = statistical_quantiles(panel, WEEKLY_LONG_WINDOW, weekly=True)
    weekly_short = statistical_quantiles(panel, WEEKLY_SHORT_WINDOW, weekly=True)
    qgrids[12] = correct_level12(qgrids[12], daily_long, daily_short,
                                 weekly_long, weekly_short)
    qgrids[11] = correct_level11(
        qgrids[11],
        aggregate_stat_quantiles(daily_long, index, 11),
        aggregate_stat_quantiles(daily_short, index, 11),
    )

    frame = assemble_submission(qgrids)
    path = run_dir / "quantiles_submission.csv"
    frame.to_csv(path, index=False)
    logger.info("quantile submission written to %s (%d rows)", path, len(frame))
    return path


def run_evaluate(config: PipelineConfig, forecast_file, start_day: int,
                 end_day: int) -> tuple[ScoreReport, Path]:
    run_dir = config.run_dir()
    write_manifest(run_dir, "evaluate", config)
    panel = load_or_build_panel(config, run_dir)
    index = build_hierarchy(panel)
    require(1 <= start_day <= end_day <= panel.n_days,
            f"truth range [{start_day}, {end_day}] outside the panel")
    require(start_day > 28, "need at least 28 days of history before the truth range")
    h = end_day - start_day + 1
    trim = config["metrics"]["trim_leading_zeros"]
    weights = compute_weights(panel, index, start_day - 1)

    frame = pd.read_csv(forecast_file, float_precision="round_trip")
    require(len(frame) > 0, f"forecast file {forecast_file} is empty")
    if "quantile" in frame.columns:
        report = _evaluate_quantile_file(frame, panel, index, weights,
                                         (start_day, end_day), h, trim)
        out = run_dir / "evaluation_quantiles.csv"
    else:
        grid = read_forecast_csv(forecast_file, panel, start_day)
        require(grid.horizon == h, f"forecast horizon {grid.horizon} != truth range {h}")
        per_level = point_level_arrays(panel, index, start_day - 1,
                                       (start_day, end_day), grid.values)
        report = evaluate_point(per_level, weights, trim)
        out = run_dir / "evaluation_point.csv"
    report.to_csv(out)
    logger.info("%s = %.6f (report: %s)", report.metric, report.total, out)
    return report, out


def _evaluate_quantile_file(frame, panel, index, weights, valid_days, h, trim):
    from .uncertainty import QuantileGrid

    fcols = [f"F{t}" for t in range(1, h + 1)]
    require(all(c in frame.columns for c in fcols),
            f"quantile file lacks horizon columns F1..F{h}")
    qgrids = {}
    for level in range(1, 13):
        keys = index.keys[level]
        sub = frame[frame["level"] == level]
        require(len(sub) == len(keys) * len(QUANTILE_LEVELS),
                f"quantile file: level {level} must have {len(keys) * 9} rows")
        values = np.empty((len(keys), h, len(QUANTILE_LEVELS)))
        sub = sub.set_index(["series_id", "quantile"])
        for i, key in enumerate(keys):
            for j, u in enumerate(QUANTILE_LEVELS):
                values[i, :, j] = sub.loc[(key, u), fcols].to_numpy()
        qgrids[level] = QuantileGrid(level, keys, valid_days[0], values)
    per_level = quantile_level_arrays(panel, index, valid_days[0] - 1, valid_days, qgrids)
    return evaluate_quantiles(per_level, weights, trim)
