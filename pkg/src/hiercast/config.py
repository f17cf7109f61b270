"""Declarative pipeline configuration: one YAML file, deep-merged over defaults.

Every command takes the same config; reproducibility comes from the seed and
the config digest, which names the run directory so identical configurations
land in identical paths with byte-identical outputs.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ValidationError
from .validation import require

DEFAULT_CONFIG = {
    "data": {
        "sales": "data/sales.csv",
        "calendar": "data/calendar.csv",
        "prices": "data/prices.csv",
    },
    "output_dir": "runs",
    "run_label": None,
    "seed": 7,
    "jobs": 1,
    "synthetic": {
        "n_stores": 3,
        "n_items": 12,
        "n_days": 400,
        "seed": 11,
    },
    "features": {
        "rolling_windows": [7, 14, 28, 56],
        "lag_rolling_lags": [1, 7, 14],
        "lag_rolling_windows": [7, 14, 28],
        "snap_mode": "own_plus_all",
    },
    "splits": {
        "strict_printed_split1": False,
    },
    "metrics": {
        "trim_leading_zeros": True,
    },
    "models": {
        "groups": ["gbdt_per_store", "gbdt_pooled", "mlp_windowed", "mlp_tweedie"],
        "gbdt_pooled": {
            "objective": "tweedie", "tweedie_variance_power": 1.1,
            "learning_rate": 0.05, "num_leaves": 31, "min_data_in_leaf": 20,
            "feature_fraction": 0.9, "subsample": 0.9, "subsample_freq": 1,
            "max_bin": 63, "n_estimators": 60,
        },
        "gbdt_per_store": {
            "params": {
                "objective": "tweedie", "tweedie_variance_power": 1.1,
                "learning_rate": 0.05, "num_leaves": 31, "min_data_in_leaf": 20,
                "feature_fraction": 0.9, "subsample": 0.9, "subsample_freq": 1,
                "max_bin": 63, "n_estimators": 60,
            },
            "n_estimators_by_store": {},
        },
        "mlp_windowed": {
            "hidden_sizes_presets": [[64, 32], [96, 48], [128, 64]],
            "window_days": 476,
            "embedding_dim": 6,
            "epochs": 8,
            "batch_size": 256,
            "learning_rate": 0.02,
            "lr_decay": 0.95,
            "snapshots_to_keep": 5,
        },
        "mlp_tweedie": {
            "hidden_sizes": [64, 32],
            "tweedie_variance_power": 1.5,
            "embedding_dim": 6,
            "epochs": 10,
            "batch_size": 256,
            "learning_rate": 0.01,
            "lr_decay": 0.95,
            "snapshots_to_keep": 5,
        },
    },
    "blend": {
        "weights_main": {
            "gbdt_per_store": 3.5, "gbdt_pooled": 1.0,
            "mlp_windowed": 1.0, "mlp_tweedie": 0.5,
        },
        "weights_last": {
            "gbdt_per_store": 3.0, "gbdt_pooled": 0.5,
            "mlp_windowed": 0.0, "mlp_tweedie": 1.5,
        },
    },
    "smoothing": {
        "alpha": 0.96,
        "apply_to_accuracy": True,
        "mode": "horizon",          # or "with_history"
        "warmup_days": 28,
    },
    "uncertainty": {
        "factor_source": "fit",     # fit | file | reference
        "factor_file": None,
        "symmetric_levels": [1, 2, 3, 4, 5, 6, 7, 8, 9],
        "fit_tolerance": 1.0e-4,
    },
}

SEED_OFFSETS = {
    "gbdt_pooled": 1, "gbdt_per_store": 2, "mlp_windowed": 3, "mlp_tweedie": 4,
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    raw: dict
    source_path: Path | None = None

    @classmethod
    def default(cls) -> "PipelineConfig":
        return cls(copy.deepcopy(DEFAULT_CONFIG))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        require(path.exists(), f"config file {path} does not exist")
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ValidationError(f"config file {path} must contain a mapping")
        cfg = cls(_deep_merge(DEFAULT_CONFIG, user), source_path=path)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        groups = self.raw["models"]["groups"]
        require(len(groups) > 0, "models.groups must list at least one group")
        known = set(SEED_OFFSETS)
        unknown = [g for g in groups if g not in known]
        require(not unknown, f"unknown model groups {unknown}; expected subset of {sorted(known)}")
        blend_groups = set(self.raw["blend"]["weights_main"])
        require(set(groups) <= blend_groups,
                f"blend.weights_main must cover every enabled group ({groups})")
        src = self.raw["uncertainty"]["factor_source"]
        require(src in ("fit", "file", "reference"),
                f"uncertainty.factor_source must be fit|file|reference, got {src!r}")
        if src == "file":
            require(self.raw["uncertainty"]["factor_file"],
                    "uncertainty.factor_source=file needs uncertainty.factor_file")
        alpha = self.raw["smoothing"]["alpha"]
        require(0.0 < alpha <= 1.0, "smoothing.alpha must lie in (0, 1]")
        require(self.raw["smoothing"]["mode"] in ("horizon", "with_history"),
                "smoothing.mode must be horizon|with_history")

    # -- accessors ---------------------------------------------------------------

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def groups(self) -> list[str]:
        return list(self.raw["models"]["groups"])

    def group_seed(self, group: str, split_index: int) -> int:
        return self.seed + 100 * split_index + SEED_OFFSETS[group]

    def data_paths(self) -> dict:
        return {k: Path(v) for k, v in self.raw["data"].items()}

    def blend_weights(self) -> tuple[dict, dict]:
        enabled = set(self.groups)
        main = {g: float(w) for g, w in self.raw["blend"]["weights_main"].items()
                if g in enabled}
        last = {g: float(w) for g, w in self.raw["blend"]["weights_last"].items()
                if g in enabled}
        return main, last

    def digest(self) -> str:
        payload = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        label = self.raw.get("run_label") or f"run-{self.digest()}"
        return Path(self.raw["output_dir"]) / label

    def snapshot(self) -> dict:
        return copy.deepcopy(self.raw)


def write_default_config(path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(DEFAULT_CONFIG, fh, sort_keys=False)
