"""Hierarchical retail sales forecasting toolkit.

Point pipeline: engineered features -> Tweedie gradient boosted trees and
embedding MLPs -> recursive 28-day forecasts -> geometric blending ->
exponential smoothing. Probabilistic pipeline: per-level quantile factors
fitted against weighted scaled pinball loss, with empirical-quantile
corrections for the two most disaggregated levels.
"""

__version__ = "0.1.0"
