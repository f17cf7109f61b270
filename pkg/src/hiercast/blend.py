"""Geometric-mean ensembling of model-group forecasts and exponential smoothing.

The blend is a weighted geometric mean per cell. The last horizon day uses its
own weight branch: the windowed-MLP group showed an unreliable final-day spike
at full scale, so its default weight there is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .validation import require

ZERO_FLOOR = 1e-6

DEFAULT_WEIGHTS_MAIN = {
    "gbdt_per_store": 3.5, "gbdt_pooled": 1.0, "mlp_windowed": 1.0, "mlp_tweedie": 0.5,
}
DEFAULT_WEIGHTS_LAST = {
    "gbdt_per_store": 3.0, "gbdt_pooled": 0.5, "mlp_windowed": 0.0, "mlp_tweedie": 1.5,
}


@dataclass(frozen=True)
class BlendSpec:
    """Per-group weight exponents for the main days and for the final day."""

    weights_main: dict
    weights_last: dict

    def __post_init__(self):
        require(set(self.weights_main) == set(self.weights_last),
                "blend branches must cover the same model groups")
        for name, weights in (("main", self.weights_main), ("last", self.weights_last)):
            require(all(w >= 0 for w in weights.values()),
                    f"blend exponents must be non-negative ({name} branch)")
            require(sum(weights.values()) > 0,
                    f"at least one positive exponent required ({name} branch)")

    @property
    def groups(self) -> list[str]:
        return sorted(self.weights_main)

    @property
    def normalizer_main(self) -> float:
        return float(sum(self.weights_main.values()))

    @property
    def normalizer_last(self) -> float:
        return float(sum(self.weights_last.values()))

    @classmethod
    def default(cls) -> "BlendSpec":
        return cls(dict(DEFAULT_WEIGHTS_MAIN), dict(DEFAULT_WEIGHTS_LAST))

    @classmethod
    def from_config(cls, cfg: dict) -> "BlendSpec":
        return cls(dict(cfg["weights_main"]), dict(cfg["weights_last"]))


def geometric_blend(grids: dict, spec: BlendSpec) -> np.ndarray:
    """Weighted geometric mean of the group grids, cell by cell.

    Zeros are floored at 1e-6 before exponentiation (the product collapses to
    0 otherwise); negative values are rejected.
    """
    for group in spec.groups:
        if group not in grids:
            raise ValidationError(f"geometric_blend: missing forecasts for group {group!r}")
    shapes = {np.asarray(grids[g]).shape for g in spec.groups}
    require(len(shapes) == 1, f"group grids disagree on shape: {shapes}")
    shape = shapes.pop()
    require(len(shape) == 2 and shape[1] >= 1, "grids must be (n_series, horizon)")

    logs = {}
    for group in spec.groups:
        values = np.asarray(grids[group], dtype=np.float64)
        if (values < 0).any():
            raise ValidationError(f"geometric_blend: negative forecast in group {group!r}")
        logs[group] = np.log(np.maximum(values, ZERO_FLOOR))

    out_main = np.zeros(shape)
    out_last = np.zeros(shape[0])
    for group in spec.groups:
        out_main += spec.weights_main[group] * logs[group]
        out_last += spec.weights_last[group] * logs[group][:, -1]
    blended = np.exp(out_main / spec.normalizer_main)
    blended[:, -1] = np.exp(out_last / spec.normalizer_last)
    return blended


def exponential_smooth(values: np.ndarray, alpha: float,
                       trailing_history: np.ndarray | None = None) -> np.ndarray:
    """Per-series exponential smoothing along the horizon.

    s_1 = f_1 and s_t = alpha f_t + (1 - alpha) s_{t-1}. When
    ``trailing_history`` is given, the recurrence warms up over it first and
    the horizon continues from the smoothed history endpoint.
    """
    require(0.0 < alpha <= 1.0, f"alpha must lie in (0, 1], got {alpha}")
    values = np.asarray(values, dtype=np.float64)
    require(values.ndim == 2 and values.shape[1] >= 1, "values must be (n_series, horizon)")
    out = np.empty_like(values)
    if trailing_history is None:
        out[:, 0] = values[:, 0]
        start = 1
    else:
        hist = np.asarray(trailing_history, dtype=np.float64)
        require(hist.ndim == 2 and hist.shape[0] == values.shape[0] and hist.shape[1] >= 1,
                "trailing history must be (n_series, >=1 days)")
        state = hist[:, 0]
        for t in range(1, hist.shape[1]):
            state = alpha * hist[:, t] + (1.0 - alpha) * state
        out[:, 0] = alpha * values[:, 0] + (1.0 - alpha) * state
        start = 1
    for t in range(start, values.shape[1]):
        out[:, t] = alpha * values[:, t] + (1.0 - alpha) * out[:, t - 1]
    return out
