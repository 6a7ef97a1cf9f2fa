"""Acceptance-probability construction, calibration, and selection.

The pipeline turns a density estimate into a uniform-in-phase-space
subsample: score every point by the reciprocal of its estimated density
(rare points score high), scale the scores so the expected number of
accepted points hits the target, then run seeded accept/reject passes.

The iterative driver repeats the whole pipeline, multiplying each
round's scores into the previous ones (in log space) so later rounds
correct the earlier density estimate on the already-flattened working
set. One iteration is the plain single-pass method.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import rng
from .data import Dataset, Permutation, shuffle
from .density import (
    LOG_DENSITY_FLOOR,
    TrainConfig,
    fit_flow,
    fit_histogram,
    floored_log_density,
)
from .density.histogram import DEFAULT_MEMORY_BUDGET
from .errors import AllPointsSelected, InvalidSpec
from .parallel import (
    DEFAULT_CHUNK,
    StageTimer,
    parallel_log_scores,
    plan_partitions,
)

CALIBRATION_TOL = 0.5
DEFAULT_N_PRIME = 10**5
DEFAULT_MAX_PASSES = 100

ESTIMATORS = ("flow", "hist")


# ------------------------------------------------------------------- scoring


def raw_acceptance(model, points) -> np.ndarray:
    """Raw scores 1/max(p(x), floor); finite and positive everywhere."""
    return np.exp(-floored_log_density(model, points))


def _log_scores_from_log_density(log_p: np.ndarray) -> np.ndarray:
    return -np.maximum(log_p, LOG_DENSITY_FLOOR)


# --------------------------------------------------------------- calibration


@dataclass(frozen=True)
class AcceptanceProfile:
    """Calibrated acceptance over a scored population.

    Scores and the scale alpha are kept in log space: iterated scores
    are products of reciprocal densities and overflow linear floats.
    """

    log_scores: np.ndarray
    log_alpha: float
    target: float
    population: int

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def scores(self) -> np.ndarray:
        return np.exp(self.log_scores)

    @property
    def probabilities(self) -> np.ndarray:
        """min(alpha * score, 1) per point, computed without overflow."""
        return np.exp(np.minimum(self.log_alpha + self.log_scores, 0.0))

    @property
    def clipped_fraction(self) -> float:
        return float(np.mean(self.log_alpha + self.log_scores >= 0.0))


def _calibration_sum(log_scores: np.ndarray, log_alpha: float) -> float:
    return float(np.exp(np.minimum(log_alpha + log_scores, 0.0)).sum())


def calibrate_log_alpha(
    log_scores_subset: np.ndarray,
    population: int,
    target: float,
    tol: float = CALIBRATION_TOL,
    method: str = "closed_form",
) -> float:
    """Solve (N/N') * sum_i min(alpha*s_i, 1) = target for log(alpha).

    The sum is nondecreasing and piecewise linear in alpha, so it is
    solved exactly by the sorted-threshold closed form, or by monotone
    bisection; the two agree within the calibration tolerance.
    """
    subset = np.asarray(log_scores_subset, dtype=np.float64)
    n_prime = subset.shape[0]
    if n_prime < 1:
        raise InvalidSpec("calibration needs at least one score")
    if not np.all(np.isfinite(subset)):
        raise InvalidSpec("calibration scores must be finite")
    if population < n_prime:
        raise InvalidSpec(f"population {population} smaller than subset {n_prime}")
    if target <= 0:
        raise InvalidSpec(f"target count must be positive, got {target}")
    if target > population:
        raise AllPointsSelected(
            f"target {target} exceeds population {population}; "
            "every acceptance probability saturates at 1"
        )

    # Work with scaled scores in (0, 1] so exponentials cannot overflow.
    peak = float(subset.max())
    scaled = np.exp(subset - peak)
    if target == population:
        # All probabilities must clip to 1: alpha = 1/min(score).
        return -float(subset.min())

    # Subsample-units target: sum over the subset alone must hit this.
    local_target = target * n_prime / population

    if method == "closed_form":
        return _closed_form(scaled, local_target, peak)
    if method == "bisect":
        return _bisect(scaled, local_target, peak, tol * n_prime / population)
    raise InvalidSpec(f"unknown calibration method {method!r}")


def _closed_form(scaled: np.ndarray, local_target: float, peak: float) -> float:
    """Exact threshold solve: with the m largest scores clipped at 1,
    alpha = (target - m) / sum(remaining scores); pick the m where the
    clip set is self-consistent."""
    n_prime = scaled.shape[0]
    desc = np.sort(scaled)[::-1]
    # suffix[m] = sum of desc[m:]; suffix over ascending order is stable.
    suffix = np.concatenate([np.cumsum(desc[::-1])[::-1], [0.0]])
    m = np.arange(n_prime)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = (local_target - m) / suffix[:-1]
    feasible = (local_target - m) > 0.0
    feasible &= alpha * desc <= 1.0 + 1e-12
    clipped_ok = np.empty(n_prime, dtype=bool)
    clipped_ok[0] = True
    clipped_ok[1:] = alpha[1:] * desc[:-1] >= 1.0 - 1e-12
    feasible &= clipped_ok
    hits = np.flatnonzero(feasible)
    if hits.size == 0:
        return _bisect(scaled, local_target, peak, 1e-9 * n_prime)
    return float(np.log(alpha[hits[0]])) - peak


def _bisect(scaled, local_target: float, peak: float, local_tol: float) -> float:
    total = float(scaled.sum())
    lo = math.log(local_target) - math.log(total)
    hi = -math.log(float(scaled.min()))
    log_scaled = np.log(scaled)

    def clipped_sum(t: float) -> float:
        return float(np.exp(np.minimum(t + log_scaled, 0.0)).sum())

    tol = max(local_tol, 1e-12) * 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        value = clipped_sum(mid)
        if abs(value - local_target) <= tol:
            return mid - peak
        if value < local_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi) - peak


def calibrate_alpha(
    scores_subset,
    population: int,
    target: float,
    tol: float = CALIBRATION_TOL,
    method: str = "closed_form",
) -> float:
    """Linear-score entry point; see `calibrate_log_alpha`."""
    scores = np.asarray(scores_subset, dtype=np.float64)
    if np.any(scores <= 0):
        raise InvalidSpec("scores must be positive")
    return math.exp(
        calibrate_log_alpha(np.log(scores), population, target, tol, method)
    )


def exact_pdf_acceptance(
    pdf, dataset, target: float, n_prime: Optional[int] = None
) -> AcceptanceProfile:
    """Calibrated profile with the density given analytically.

    `pdf` is a callable mapping an (n, D) array to (n,) densities.
    """
    values = dataset.values if isinstance(dataset, Dataset) else np.asarray(dataset)
    density = np.asarray(pdf(values), dtype=np.float64)
    if density.shape != (values.shape[0],):
        raise InvalidSpec("pdf must return one density per row")
    if np.any(~np.isfinite(density) | (density < 0)):
        raise InvalidSpec("pdf values must be finite and nonnegative")
    with np.errstate(divide="ignore"):
        log_scores = _log_scores_from_log_density(np.log(density))
    n = values.shape[0]
    if n_prime is None:
        n_prime = min(n, DEFAULT_N_PRIME)
    log_alpha = calibrate_log_alpha(log_scores[:n_prime], n, target)
    return AcceptanceProfile(
        log_scores=log_scores, log_alpha=log_alpha, target=target, population=n
    )


# ----------------------------------------------------------------- selection


def select_pass(
    probabilities: np.ndarray,
    count: int,
    seed: int,
    max_passes: int = DEFAULT_MAX_PASSES,
    key_parts: tuple = ("select",),
) -> np.ndarray:
    """Accept/reject scan in index order until `count` points are kept.

    Draws are keyed by (seed, key_parts, pass, global row index), so the
    outcome is independent of execution schedule. Each pass scans the
    not-yet-selected points and keeps accepted ones while the running
    total is short of `count`; after `max_passes` the remaining deficit
    is topped up deterministically by descending probability (ties by
    ascending index).
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    n_total = probs.shape[0]
    if not 1 <= count <= n_total:
        raise InvalidSpec(f"count {count} outside [1, {n_total}]")
    if np.any((probs < 0) | (probs > 1) | ~np.isfinite(probs)):
        raise InvalidSpec("probabilities must lie in [0, 1]")

    selected = np.zeros(n_total, dtype=bool)
    remaining = np.arange(n_total, dtype=np.int64)
    have = 0
    for pass_no in range(1, max_passes + 1):
        if have >= count:
            break
        key = rng.derive_key(seed, *key_parts, pass_no)
        draws = rng.counter_uniforms_at(key, remaining)
        accepted = remaining[draws < probs[remaining]]
        take = accepted[: count - have]
        selected[take] = True
        have += take.shape[0]
        if take.shape[0] == accepted.shape[0]:
            # Whole pass exhausted without filling up: retry the rest.
            remaining = remaining[draws >= probs[remaining]]
        if remaining.shape[0] == 0:
            break
    if have < count:
        rest = np.flatnonzero(~selected)
        order = np.lexsort((rest, -probs[rest]))
        top_up = rest[order[: count - have]]
        selected[top_up] = True
    return np.flatnonzero(selected).astype(np.int64)


# ------------------------------------------------------------------- drivers


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for the end-to-end selection drivers."""

    n: int
    m: int
    iterations: int = 1
    n_prime: Optional[int] = None
    estimator: str = "flow"
    train: TrainConfig = TrainConfig()
    bins: int = 100
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    seed: int = 0
    max_passes: int = DEFAULT_MAX_PASSES
    workers: Optional[int] = None
    chunk: int = DEFAULT_CHUNK
    keep_probabilities: bool = False

    def resolved_n_prime(self, n_rows: int) -> int:
        if self.n_prime is None:
            return min(n_rows, DEFAULT_N_PRIME)
        return self.n_prime

    def validate(self, n_rows: int) -> None:
        if not 1 <= self.n <= n_rows:
            raise InvalidSpec(f"n={self.n} outside [1, {n_rows}]")
        if not 1 <= self.m <= n_rows:
            raise InvalidSpec(f"m={self.m} outside [1, {n_rows}]")
        if self.iterations < 1:
            raise InvalidSpec(f"iterations must be >= 1, got {self.iterations}")
        n_prime = self.resolved_n_prime(n_rows)
        if not 1 <= n_prime <= n_rows:
            raise InvalidSpec(f"n_prime={n_prime} outside [1, {n_rows}]")
        if self.estimator not in ESTIMATORS:
            raise InvalidSpec(f"estimator must be one of {ESTIMATORS}")
        if self.max_passes < 1:
            raise InvalidSpec(f"max_passes must be >= 1, got {self.max_passes}")


@dataclass
class IterationDiagnostics:
    """Per-iteration record: scale, clip share, fit quality, timings."""

    iteration: int
    alpha: float
    log_alpha: float
    clipped_fraction: float
    realized: int
    nll_history: Optional[list]
    final_nll: Optional[float]
    step1_s: float
    step2a_s: float
    step2b_s: float


@dataclass
class SelectionResult:
    """Outcome of a selection run.

    `indices` point into the shuffled dataset; `permutation` maps them
    back: original row of shuffled row i is `permutation.order[i]`.
    """

    indices: np.ndarray
    permutation: Permutation
    realized: int
    iterations: list
    method: str
    config: SelectionConfig
    probabilities: Optional[np.ndarray] = None

    @property
    def original_indices(self) -> np.ndarray:
        return self.permutation.order[self.indices]

    def selected(self, dataset: Dataset) -> Dataset:
        """The selected rows of the original dataset."""
        return dataset.take(self.original_indices, "selected")


def _as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset(np.array(data, dtype=np.float64))


def _fit_estimator(working: np.ndarray, config: SelectionConfig, iteration: int):
    """Returns (model, nll_history, final_nll) for the configured kind."""
    if config.estimator == "flow":
        fit_seed = rng.derive_key(config.seed, "fit", iteration)
        model, history = fit_flow(working, replace(config.train, seed=fit_seed))
        return model, history, model.final_nll
    model = fit_histogram(working, config.bins, config.memory_budget)
    return model, None, None


def predictor_corrector_select(dataset, config: SelectionConfig) -> SelectionResult:
    """Iterated fit/score/select; one iteration is the plain method.

    Every iteration fits the estimator on the current working set and
    scores all rows; from the second iteration on, scores multiply into
    the running product. Intermediate iterations select M points to
    become the next working set; the last iteration selects n.
    """
    ds = _as_dataset(dataset)
    config.validate(ds.n_rows)
    n_rows = ds.n_rows
    n_prime = config.resolved_n_prime(n_rows)
    plan = plan_partitions(n_rows, config.workers, config.chunk)

    shuffled, permutation = shuffle(ds, config.seed)
    working = shuffled.values[: config.m]

    cumulative = np.zeros(n_rows)
    diagnostics = []
    final_indices = None
    final_probs = None

    for iteration in range(1, config.iterations + 1):
        timer = StageTimer()
        with timer.time("step1"):
            model, nll_history, final_nll = _fit_estimator(working, config, iteration)
        with timer.time("step2a"):
            cumulative = cumulative + parallel_log_scores(model, shuffled.values, plan)
        is_last = iteration == config.iterations
        target = config.n if is_last else config.m
        with timer.time("step2b"):
            log_alpha = calibrate_log_alpha(cumulative[:n_prime], n_rows, target)
            probs = np.exp(np.minimum(log_alpha + cumulative, 0.0))
            chosen = select_pass(
                probs,
                target,
                config.seed,
                config.max_passes,
                key_parts=("select", iteration),
            )
        diagnostics.append(
            IterationDiagnostics(
                iteration=iteration,
                alpha=math.exp(log_alpha),
                log_alpha=log_alpha,
                clipped_fraction=float(np.mean(log_alpha + cumulative >= 0.0)),
                realized=int(chosen.shape[0]),
                nll_history=nll_history,
                final_nll=final_nll,
                step1_s=timer.seconds.get("step1", 0.0),
                step2a_s=timer.seconds.get("step2a", 0.0),
                step2b_s=timer.seconds.get("step2b", 0.0),
            )
        )
        if is_last:
            final_indices = chosen
            final_probs = probs
        else:
            working = shuffled.values[chosen]

    return SelectionResult(
        indices=final_indices,
        permutation=permutation,
        realized=int(final_indices.shape[0]),
        iterations=diagnostics,
        method="predictor_corrector" if config.iterations > 1 else "predictor",
        config=config,
        probabilities=final_probs if config.keep_probabilities else None,
    )


def predictor_select(dataset, config: SelectionConfig) -> SelectionResult:
    """Single-round driver: fit once, score once, select n."""
    ds = _as_dataset(dataset)
    config.validate(ds.n_rows)
    return predictor_corrector_select(ds, replace(config, iterations=1))
