"""Small input-validation helpers used at module boundaries."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import ValidationError


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def check_columns(df: pd.DataFrame, required: list[str], what: str) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValidationError(f"{what}: missing required columns {missing}")


def as_float_matrix(values, name: str = "values") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting inf (NaN is the missing marker)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if np.isinf(arr).any():
        raise ValidationError(f"{name}: contains non-finite (inf) entries")
    return arr


def check_day_range(start: int, end: int, n_days: int, what: str) -> None:
    require(1 <= start <= end, f"{what}: invalid day range [{start}, {end}]")
    require(end <= n_days, f"{what}: day range [{start}, {end}] exceeds available {n_days} days")
