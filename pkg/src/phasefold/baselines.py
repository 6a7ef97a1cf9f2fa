"""Comparison samplers: random, k-means stratified, brute-force
criterion maximization, and single-shot full-data binning.

Each sampler returns row indices into the given dataset (no new points,
deterministic per seed), so results are directly comparable with the
main selection drivers.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .data import Dataset, apply_rescaler, fit_rescaler
from .density.histogram import DEFAULT_MEMORY_BUDGET
from .errors import InvalidSpec
from .metrics import nearest_neighbors
from .selection import SelectionConfig, SelectionResult, predictor_select

DEFAULT_KMEANS_ITERS = 50
_ASSIGN_BLOCK_ELEMENTS = 4_000_000


def _as_values(data) -> np.ndarray:
    values = data.values if isinstance(data, Dataset) else np.asarray(data)
    return np.atleast_2d(np.asarray(values, dtype=np.float64))


# ------------------------------------------------------------ random sample


def random_sample(dataset, n: int, seed: int) -> np.ndarray:
    """n distinct row indices, uniform without replacement."""
    values = _as_values(dataset)
    total = values.shape[0]
    if not 1 <= n <= total:
        raise InvalidSpec(f"sample size {n} outside [1, {total}]")
    idx = rng.stream(seed, "random-sample").choice(total, size=n, replace=False)
    return np.sort(idx).astype(np.int64)


# ----------------------------------------------------------------- k-means


@dataclass
class KMeansModel:
    """Lloyd's algorithm output.

    ``inertia_history`` records the total squared distance to assigned
    centroids once per iteration; it never increases.
    """

    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list
    iterations: int

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _assign(values: np.ndarray, centroids: np.ndarray):
    """Nearest centroid per row (ties to the lower centroid index) and
    the squared distance to it, computed in fixed-size row blocks."""
    n, dims = values.shape
    k = centroids.shape[0]
    block = max(1, _ASSIGN_BLOCK_ELEMENTS // max(k * dims, 1))
    labels = np.empty(n, dtype=np.int64)
    best_sq = np.empty(n, dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = values[start:stop, None, :] - centroids[None, :, :]
        sq = (diff * diff).sum(axis=2)
        labels[start:stop] = sq.argmin(axis=1)
        best_sq[start:stop] = sq[np.arange(stop - start), labels[start:stop]]
    return labels, best_sq


def _repair_empty_clusters(
    centroids: np.ndarray,
    empties: list,
    values: np.ndarray,
    best_sq: np.ndarray,
) -> None:
    """Reseed each empty cluster from the point currently farthest from
    its assigned centroid; the chosen point's distance is zeroed so
    several empties pick distinct points. Ties go to the lower row."""
    farthest = best_sq.copy()
    for j in empties:
        pick = int(np.argmax(farthest))
        centroids[j] = values[pick]
        farthest[pick] = 0.0


def _plus_plus_init(values: np.ndarray, k: int, gen) -> np.ndarray:
    """Standard D²-weighted seeding."""
    n = values.shape[0]
    centroids = np.empty((k, values.shape[1]), dtype=np.float64)
    first = int(gen.integers(n))
    centroids[0] = values[first]
    diff = values - centroids[0]
    d2 = (diff * diff).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(gen.choice(n, p=d2 / total))
        else:
            pick = int(gen.integers(n))
        centroids[j] = values[pick]
        diff = values - centroids[j]
        d2 = np.minimum(d2, (diff * diff).sum(axis=1))
    return centroids


def kmeans(
    dataset,
    k: int,
    seed: int,
    max_iters: int = DEFAULT_KMEANS_ITERS,
    sample_size: Optional[int] = None,
) -> KMeansModel:
    """Lloyd's algorithm with D²-weighted init.

    Empty clusters are reseeded from the point farthest from its
    assigned centroid. With ``sample_size`` smaller than the dataset,
    centroids are fitted on a seeded random subsample and only the
    final assignment runs over everything (the reported history then
    covers the fitting population, the final inertia the full one).
    """
    values = _as_values(dataset)
    total = values.shape[0]
    if not 1 <= k <= total:
        raise InvalidSpec(f"k={k} outside [1, {total}]")
    if max_iters < 1:
        raise InvalidSpec(f"max_iters must be >= 1, got {max_iters}")

    fit_values = values
    if sample_size is not None and sample_size < total:
        if sample_size < k:
            raise InvalidSpec(f"sample_size {sample_size} smaller than k={k}")
        pick = rng.stream(seed, "kmeans-sample").choice(
            total, size=sample_size, replace=False
        )
        fit_values = values[np.sort(pick)]

    gen = rng.stream(seed, "kmeans-init")
    centroids = _plus_plus_init(fit_values, k, gen)

    labels = None
    history = []
    iterations = 0
    for _ in range(max_iters):
        new_labels, best_sq = _assign(fit_values, centroids)
        history.append(float(best_sq.sum()))
        iterations += 1
        if labels is not None and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        # Update step: per-cluster means; a single cluster reproduces
        # the plain dataset mean bit for bit.
        empties = []
        for j in range(k):
            members = np.flatnonzero(labels == j)
            if members.size:
                centroids[j] = fit_values[members].mean(axis=0)
            else:
                empties.append(j)
        if empties:
            _repair_empty_clusters(centroids, empties, fit_values, best_sq)

    if fit_values is not values:
        labels, best_sq = _assign(values, centroids)
        inertia = float(best_sq.sum())
    else:
        inertia = history[-1]
    return KMeansModel(
        centroids=centroids,
        assignments=labels,
        inertia=inertia,
        inertia_history=history,
        iterations=iterations,
    )


# ------------------------------------------------------- stratified sampling


def _allocate_quotas(sizes: np.ndarray, n: int) -> np.ndarray:
    """Equal allocation with remainder to the largest clusters and
    round-robin redistribution of quota that small clusters cannot fill."""
    k = sizes.shape[0]
    quotas = np.full(k, n // k, dtype=np.int64)
    # Remainder goes to the largest clusters, ties to the lower index.
    remainder = n - int(quotas.sum())
    if remainder:
        order = np.lexsort((np.arange(k), -sizes))
        quotas[order[:remainder]] += 1
    # Clusters smaller than their quota hand the deficit around.
    overflow = np.maximum(quotas - sizes, 0)
    quotas = np.minimum(quotas, sizes)
    deficit = int(overflow.sum())
    while deficit:
        progressed = False
        for j in range(k):
            if deficit == 0:
                break
            if quotas[j] < sizes[j]:
                quotas[j] += 1
                deficit -= 1
                progressed = True
        if not progressed:
            raise InvalidSpec("allocation infeasible: n exceeds population")
    return quotas


def stratified_sample(dataset, model: KMeansModel, n: int, seed: int) -> np.ndarray:
    """Equal-per-cluster sampling from a fitted clustering."""
    values = _as_values(dataset)
    total = values.shape[0]
    if not 1 <= n <= total:
        raise InvalidSpec(f"sample size {n} outside [1, {total}]")
    if model.assignments.shape[0] != total:
        raise InvalidSpec(
            f"clustering covers {model.assignments.shape[0]} rows, dataset has {total}"
        )
    sizes = np.bincount(model.assignments, minlength=model.k)
    quotas = _allocate_quotas(sizes, n)
    chosen = []
    for j in range(model.k):
        members = np.flatnonzero(model.assignments == j)
        if quotas[j] == 0:
            continue
        gen = rng.stream(seed, "stratified", j)
        take = gen.choice(members.shape[0], size=int(quotas[j]), replace=False)
        chosen.append(members[take])
    return np.sort(np.concatenate(chosen)).astype(np.int64)


# ------------------------------------------------- brute-force maximization


def brute_force_max_criterion(
    dataset, n: int, iterations: int, seed: int
) -> tuple:
    """Best random subset by distance criterion over seeded redraws.

    Returns (indices, criterion). The criterion is evaluated on points
    rescaled to [-4, 4] with the scaler fitted on the full dataset,
    applied once up front (affine maps commute with row selection).
    """
    if iterations < 1:
        raise InvalidSpec(f"iterations must be >= 1, got {iterations}")
    values = _as_values(dataset)
    ds = Dataset(values)
    rescaled = apply_rescaler(fit_rescaler(ds), ds).values
    best_idx, best_value = None, -math.inf
    for j in range(iterations):
        idx = random_sample(values, n, rng.derive_key(seed, "iter", j))
        _, distances = nearest_neighbors(rescaled[idx], method="auto")
        value = float(distances.mean())
        if value > best_value:
            best_idx, best_value = idx, value
    return best_idx, best_value


# -------------------------------------------------------- full-data binning


def full_binning_select(
    dataset,
    n: int,
    bins_per_dim: int,
    seed: int,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    keep_probabilities: bool = False,
) -> SelectionResult:
    """Single-shot histogram selection fitted on every row.

    The histogram working set is the whole dataset (no subsetting, no
    iteration); calibration and selection then run the standard path.
    Large bin-grid requests fail up front on the memory budget.
    """
    ds = dataset if isinstance(dataset, Dataset) else Dataset(_as_values(dataset))
    config = SelectionConfig(
        n=n,
        m=ds.n_rows,
        iterations=1,
        estimator="hist",
        bins=bins_per_dim,
        memory_budget=memory_budget,
        seed=seed,
        keep_probabilities=keep_probabilities,
    )
    result = predictor_select(ds, config)
    result.method = "full_binning"
    return result
