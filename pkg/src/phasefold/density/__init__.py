"""Probability-map estimators exposing pointwise log-density evaluation.

Two interchangeable estimators: a multidimensional equidistant-bin
histogram and a coupling-layer normalizing flow trained by maximum
likelihood. Both are immutable once fitted and safe for concurrent
evaluation.
"""

import numpy as np

from .histogram import HistogramDensity, fit_histogram
from .flow import FlowDensity, TrainConfig, fit_flow, mean_nll
from .io import load_model, save_model

# Acceptance scoring floors densities here: points rarer than this share
# the maximal (clipped-anyway) score, and reciprocals stay finite.
DENSITY_FLOOR = 1e-12

LOG_DENSITY_FLOOR = float(np.log(DENSITY_FLOOR))

__all__ = [
    "DENSITY_FLOOR",
    "LOG_DENSITY_FLOOR",
    "HistogramDensity",
    "fit_histogram",
    "FlowDensity",
    "TrainConfig",
    "fit_flow",
    "mean_nll",
    "load_model",
    "save_model",
    "log_density",
    "floored_log_density",
]


def log_density(model, points):
    """Pointwise log density; dispatches to the model's own method."""
    return model.log_density(points)


def floored_log_density(model, points) -> np.ndarray:
    """Log density clamped below at the global scoring floor."""
    return np.maximum(model.log_density(points), LOG_DENSITY_FLOOR)
