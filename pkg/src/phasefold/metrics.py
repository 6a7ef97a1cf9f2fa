"""Evaluation metrics for downsampled datasets.

The headline number is the mean nearest-neighbor distance ("distance
criterion"): uniform, space-filling subsets score high, clumped ones
score low. Nearest neighbors are exact; the tree-accelerated path
returns bitwise the same distances and indices as the quadratic scan,
because both evaluate candidates with the same vectorized expression
and break ties toward the lower index.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, apply_rescaler, fit_rescaler
from .errors import InvalidSpec
from .selection import AcceptanceProfile, exact_pdf_acceptance

DEFAULT_LEAF_SIZE = 16
_BRUTE_CUTOFF = 512  # below this a direct scan beats tree overhead


def _as_values(points) -> np.ndarray:
    values = points.values if isinstance(points, Dataset) else np.asarray(points)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.ndim != 2:
        raise InvalidSpec(f"points must be 2-D, got shape {values.shape}")
    return values


def _block_sq_dists(query: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Squared distances from one query row to a block of candidates.

    Both search paths funnel through this one expression so their
    results are bitwise identical.
    """
    diff = block - query
    return (diff * diff).sum(axis=1)


# ---------------------------------------------------------------- k-d tree


class NNIndex:
    """Immutable k-d tree over an (n, D) point set.

    Median splits on the widest axis; leaves hold up to ``leaf_size``
    points. Queries never prune a subtree whose bounding plane lies at
    exactly the current best distance, so equal-distance candidates are
    always seen and the lower index wins ties.
    """

    def __init__(self, points, leaf_size: int = DEFAULT_LEAF_SIZE):
        values = _as_values(points)
        if leaf_size < 1:
            raise InvalidSpec(f"leaf_size must be >= 1, got {leaf_size}")
        self.points = values
        self.leaf_size = int(leaf_size)
        n = values.shape[0]
        self._order = np.arange(n, dtype=np.int64)
        self._split_dim: list = []
        self._split_val: list = []
        self._children: list = []  # (left, right) node ids, or None for leaf
        self._bounds: list = []  # (start, stop) into _order for leaves
        if n:
            self._build(0, n)

    def _new_node(self) -> int:
        self._split_dim.append(-1)
        self._split_val.append(0.0)
        self._children.append(None)
        self._bounds.append((0, 0))
        return len(self._children) - 1

    def _build(self, start: int, stop: int) -> int:
        node = self._new_node()
        if stop - start <= self.leaf_size:
            self._bounds[node] = (start, stop)
            return node
        idx = self._order[start:stop]
        coords = self.points[idx]
        extent = coords.max(axis=0) - coords.min(axis=0)
        dim = int(np.argmax(extent))
        mid = (stop - start) // 2
        part = np.argpartition(coords[:, dim], mid)
        self._order[start:stop] = idx[part]
        self._split_dim[node] = dim
        self._split_val[node] = float(self.points[self._order[start + mid], dim])
        left = self._build(start, start + mid)
        right = self._build(start + mid, stop)
        self._children[node] = (left, right)
        return node

    def query(self, point, exclude: Optional[int] = None):
        """Nearest neighbor of ``point``: (index, distance).

        ``exclude`` skips one stored row (used for self-queries).
        """
        q = np.asarray(point, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.points.shape[1]:
            raise InvalidSpec(
                f"query has {q.shape[0]} dims, index has {self.points.shape[1]}"
            )
        if self.points.shape[0] == 0:
            raise InvalidSpec("index holds no points")
        best_sq, best_idx = np.inf, -1
        # Each entry carries a lower bound on distances inside it, tested
        # at pop time (after the near side may have shrunk best_sq); a
        # bound exactly equal to the best is still visited so that
        # equal-distance, lower-index candidates are never missed.
        stack = [(0, 0.0)]
        while stack:
            node, bound_sq = stack.pop()
            if bound_sq > best_sq:
                continue
            children = self._children[node]
            if children is None:
                start, stop = self._bounds[node]
                idx = self._order[start:stop]
                if idx.shape[0] == 0:
                    continue
                sq = _block_sq_dists(q, self.points[idx])
                if exclude is not None:
                    sq = np.where(idx == exclude, np.inf, sq)
                pos = int(np.argmin(sq))
                cand_sq = sq[pos]
                # The leaf holds a permuted order; resolve equal-distance
                # candidates to the lowest index.
                ties = idx[sq == cand_sq]
                cand_idx = int(ties.min()) if ties.size else -1
                if cand_sq < best_sq or (cand_sq == best_sq and cand_idx < best_idx):
                    best_sq, best_idx = cand_sq, cand_idx
                continue
            dim, val = self._split_dim[node], self._split_val[node]
            delta = q[dim] - val
            near, far = children if delta <= 0 else (children[1], children[0])
            stack.append((far, max(bound_sq, delta * delta)))
            stack.append((near, bound_sq))
        return best_idx, math.sqrt(best_sq)

    def self_neighbors(self):
        """Exact nearest distinct-index neighbor for every stored row."""
        n = self.points.shape[0]
        indices = np.empty(n, dtype=np.int64)
        distances = np.empty(n, dtype=np.float64)
        for i in range(n):
            idx, dist = self.query(self.points[i], exclude=i)
            indices[i] = idx
            distances[i] = dist
        return indices, distances


def _brute_self_neighbors(values: np.ndarray):
    n, dims = values.shape
    # One full (n, n, D) difference tensor when it fits comfortably:
    # per-pair reduction over D is elementwise-independent, so the
    # result is bitwise the same as the row-at-a-time scan below.
    if n * n * max(dims, 1) <= 4_000_000:
        diff = values[:, None, :] - values[None, :, :]
        sq = (diff * diff).sum(axis=2)
        np.fill_diagonal(sq, np.inf)
        indices = sq.argmin(axis=1).astype(np.int64)
        distances = np.sqrt(sq[np.arange(n), indices])
        return indices, distances
    indices = np.empty(n, dtype=np.int64)
    distances = np.empty(n, dtype=np.float64)
    for i in range(n):
        sq = _block_sq_dists(values[i], values)
        sq[i] = np.inf
        pos = int(np.argmin(sq))
        indices[i] = pos
        distances[i] = math.sqrt(sq[pos])
    return indices, distances


def nearest_neighbors(points, method: str = "auto", leaf_size: int = DEFAULT_LEAF_SIZE):
    """Per-point nearest distinct neighbor: (indices, distances).

    Methods "kdtree" and "brute" give identical output; "auto" picks by
    size.
    """
    values = _as_values(points)
    if values.shape[0] < 2:
        raise InvalidSpec("nearest neighbors need at least two points")
    if method == "auto":
        method = "brute" if values.shape[0] <= _BRUTE_CUTOFF else "kdtree"
    if method == "brute":
        return _brute_self_neighbors(values)
    if method == "kdtree":
        return NNIndex(values, leaf_size).self_neighbors()
    raise InvalidSpec(f"unknown nearest-neighbor method {method!r}")


# ---------------------------------------------------------------- criterion


def distance_criterion(
    points,
    rescale: bool = True,
    reference=None,
    method: str = "auto",
) -> float:
    """Mean distance from each point to its nearest neighbor.

    With ``rescale`` the points first map onto the [-4, 4] box, fitted
    on ``reference`` when given (comparability across subsets of the
    same parent), else on the points themselves.
    """
    values = _as_values(points)
    if values.shape[0] < 2:
        raise InvalidSpec("distance criterion needs at least two points")
    if rescale:
        fit_on = Dataset(_as_values(reference)) if reference is not None else Dataset(values)
        values = apply_rescaler(fit_rescaler(fit_on), Dataset(values)).values
    _, distances = nearest_neighbors(values, method=method)
    return float(distances.mean())


# ---------------------------------------------------- conditional error curve


@dataclass(frozen=True)
class ConditionalErrorCurve:
    """Acceptance-probability error conditioned on the exact probability.

    Bins are equal-width over the observed exact-probability range;
    empty bins carry NaN means (missing, not zero error).
    """

    centers: np.ndarray
    rel_mean: np.ndarray
    abs_mean: np.ndarray
    counts: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def __post_init__(self):
        for name in ("centers", "rel_mean", "abs_mean", "counts"):
            arr = getattr(self, name)
            arr.flags.writeable = False


def conditional_acceptance_error(
    exact_pdf,
    estimated,
    dataset,
    bins: int = 20,
    target: Optional[float] = None,
) -> ConditionalErrorCurve:
    """Bin |estimated - exact| acceptance error by the exact probability.

    ``estimated`` is either a calibrated AcceptanceProfile or a bare
    probability array (then ``target`` must say what count it was
    calibrated for, so the exact reference uses the same budget).
    """
    values = _as_values(dataset)
    if isinstance(estimated, AcceptanceProfile):
        est_probs = estimated.probabilities
        target = estimated.target if target is None else target
    else:
        est_probs = np.asarray(estimated, dtype=np.float64)
        if target is None:
            raise InvalidSpec("target required when estimated is a bare array")
    if est_probs.shape != (values.shape[0],):
        raise InvalidSpec(
            f"estimated probabilities shape {est_probs.shape} does not match "
            f"{values.shape[0]} rows"
        )
    if bins < 1:
        raise InvalidSpec(f"bins must be >= 1, got {bins}")

    exact = exact_pdf_acceptance(exact_pdf, values, target)
    s_star = exact.probabilities
    rel_err = np.abs(est_probs - s_star) / s_star
    abs_err = np.abs(est_probs - s_star)

    lo, hi = float(s_star.min()), float(s_star.max())
    if hi > lo:
        width = (hi - lo) / bins
        which = np.clip(((s_star - lo) / width).astype(np.int64), 0, bins - 1)
    else:
        which = np.zeros(s_star.shape[0], dtype=np.int64)
    counts = np.bincount(which, minlength=bins)
    rel_sum = np.bincount(which, weights=rel_err, minlength=bins)
    abs_sum = np.bincount(which, weights=abs_err, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel_mean = np.where(counts > 0, rel_sum / counts, np.nan)
        abs_mean = np.where(counts > 0, abs_sum / counts, np.nan)
    centers = lo + (np.arange(bins) + 0.5) * ((hi - lo) / bins if hi > lo else 1.0)
    return ConditionalErrorCurve(
        centers=centers,
        rel_mean=rel_mean,
        abs_mean=abs_mean,
        counts=counts.astype(np.int64),
    )


def write_curve_csv(curve: ConditionalErrorCurve, path: str) -> None:
    """Export a curve as bin_center,rel_err,abs_err,count rows.

    Empty bins leave the error cells blank.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "rel_err", "abs_err", "count"])
        for center, rel, ab, count in zip(
            curve.centers, curve.rel_mean, curve.abs_mean, curve.counts
        ):
            rel_cell = "" if math.isnan(rel) else repr(float(rel))
            abs_cell = "" if math.isnan(ab) else repr(float(ab))
            writer.writerow([repr(float(center)), rel_cell, abs_cell, int(count)])
