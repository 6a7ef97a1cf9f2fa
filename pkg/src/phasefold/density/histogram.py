"""Equidistant multidimensional histogram density estimator.

The estimator bins the working data into ``B`` equal-width bins per
dimension over the data's exact bounding box and converts bin counts to
probability masses. Density is mass divided by bin volume, with a small
mass floor so that every finite query point, including points outside
the box and points in empty bins, gets a finite log density.
"""

from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from ..errors import InvalidSpec, OutOfMemoryBudget

DEFAULT_MEMORY_BUDGET = 4 * 1024**3

# Relative mass floor: empty or out-of-box cells get this fraction of the
# heaviest bin's mass, keeping log densities finite while still marking
# such points as maximally rare.
FLOOR_RATIO = 1e-12


def _as_values(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.values
    return np.asarray(data, dtype=np.float64)


@dataclass(frozen=True)
class HistogramDensity:
    """Fitted histogram with per-dim equidistant edges.

    ``masses`` is the flattened (C-order) array of bin probability
    masses, one entry per cell of the ``B``-per-dim grid.
    """

    bins_per_dim: int
    lower: np.ndarray
    upper: np.ndarray
    masses: np.ndarray
    trained_on: int

    kind = "histogram"

    @property
    def dims(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return (self.upper - self.lower) / self.bins_per_dim

    @property
    def bin_volume(self) -> float:
        # Zero-extent dims contribute unit width so volume stays positive.
        w = self.widths
        return float(np.prod(np.where(w > 0.0, w, 1.0)))

    @property
    def floor_mass(self) -> float:
        return FLOOR_RATIO * float(self.masses.max())

    def edges(self, dim: int) -> np.ndarray:
        """The ``B + 1`` bin edges along one dimension."""
        return np.linspace(self.lower[dim], self.upper[dim], self.bins_per_dim + 1)

    def _cell_index(self, points: np.ndarray):
        """Flattened cell index and in-box mask for each query row."""
        return _flat_index(points, self.lower, self.upper, self.bins_per_dim)

    def log_density(self, points) -> np.ndarray:
        """Log density per row; finite for any finite input."""
        x = np.atleast_2d(_as_values(points))
        if x.shape[1] != self.dims:
            raise InvalidSpec(
                f"query has {x.shape[1]} dims, model was fit on {self.dims}"
            )
        flat, inside = self._cell_index(x)
        mass = np.where(inside, self.masses[flat], 0.0)
        mass = np.maximum(mass, self.floor_mass)
        return np.log(mass) - np.log(self.bin_volume)


def _flat_index(points: np.ndarray, lower, upper, b: int):
    """Flattened cell index and in-box mask for each query row."""
    width = (upper - lower) / b
    safe_w = np.where(width > 0.0, width, 1.0)
    idx = np.floor((points - lower) / safe_w).astype(np.int64)
    # The upper boundary belongs to the last bin.
    np.clip(idx, 0, b - 1, out=idx)
    idx[:, width <= 0.0] = 0
    inside = np.all((points >= lower) & (points <= upper), axis=1)
    flat = np.zeros(points.shape[0], dtype=np.int64)
    for d in range(points.shape[1]):
        flat *= b
        flat += idx[:, d]
    return flat, inside


def estimate_cells(bins_per_dim: int, dims: int) -> int:
    """Exact cell count B**D as a Python integer (never overflows)."""
    return int(bins_per_dim) ** int(dims)


def fit_histogram(
    working,
    bins_per_dim: int,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> HistogramDensity:
    """Fit the histogram on the working data.

    Raises OutOfMemoryBudget before any grid allocation when the
    estimated table size (8 bytes per cell) exceeds ``memory_budget``.
    """
    values = _as_values(working)
    if values.ndim != 2 or values.shape[0] < 1:
        raise InvalidSpec("working data must be a non-empty 2-D array")
    if bins_per_dim < 1:
        raise InvalidSpec(f"bins_per_dim must be >= 1, got {bins_per_dim}")
    n, dims = values.shape
    cells = estimate_cells(bins_per_dim, dims)
    needed = cells * 8
    if needed > memory_budget:
        raise OutOfMemoryBudget(
            f"histogram with {bins_per_dim}^{dims} cells needs {needed} bytes, "
            f"budget is {memory_budget}"
        )

    lower = values.min(axis=0)
    upper = values.max(axis=0)
    flat, inside = _flat_index(values, lower, upper, bins_per_dim)
    assert bool(inside.all()), "training points must lie in their own bounding box"
    # In-place accumulation keeps peak memory at one float table; counts
    # are exact in float64, so the normalized masses sum to 1 tightly.
    masses = np.zeros(cells)
    np.add.at(masses, flat, 1.0)
    masses /= n
    masses.flags.writeable = False
    return HistogramDensity(
        bins_per_dim=int(bins_per_dim),
        lower=lower,
        upper=upper,
        masses=masses,
        trained_on=n,
    )
