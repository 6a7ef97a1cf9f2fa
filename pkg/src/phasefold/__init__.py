"""Uniform-in-phase-space instance selection.

Reduce a large dataset to a small subset whose points cover the
occupied region of feature space evenly: estimate the density, accept
points with probability proportional to its reciprocal (calibrated so
the expected count hits the target), and optionally iterate the whole
procedure so later rounds correct the earlier density estimates.
"""

__version__ = "0.1.0"

from .data import Dataset, load_dataset, save_dataset
from .density import TrainConfig, fit_flow, fit_histogram, load_model, save_model
from .errors import PhasefoldError
from .metrics import distance_criterion, nearest_neighbors
from .selection import (
    SelectionConfig,
    SelectionResult,
    predictor_corrector_select,
    predictor_select,
)

__all__ = [
    "__version__",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "TrainConfig",
    "fit_flow",
    "fit_histogram",
    "load_model",
    "save_model",
    "PhasefoldError",
    "distance_criterion",
    "nearest_neighbors",
    "SelectionConfig",
    "SelectionResult",
    "predictor_corrector_select",
    "predictor_select",
]
