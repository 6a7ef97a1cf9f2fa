"""Deterministic data-parallel execution over fixed row partitions.

The invariant everything here serves: results are a function of the
partition plan, never of the worker count or schedule. Partition count
and boundaries depend only on the row count and a configured chunk
size; each partition writes a disjoint output slice; reductions combine
per-partition partials in fixed partition order. Shared inputs (models,
datasets) are read-only during parallel regions.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .density import floored_log_density
from .errors import InvalidSpec, WorkerFailed

DEFAULT_CHUNK = 65536
WORKERS_ENV = "PHASEFOLD_WORKERS"


def resolve_workers(workers=None) -> int:
    """Explicit argument, else the environment variable, else 1."""
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        if raw:
            try:
                workers = int(raw)
            except ValueError:
                raise InvalidSpec(f"{WORKERS_ENV} must be an integer, got {raw!r}")
        else:
            workers = 1
    workers = int(workers)
    if workers < 1:
        raise InvalidSpec(f"worker count must be >= 1, got {workers}")
    return workers


@dataclass(frozen=True)
class PartitionPlan:
    """Contiguous row ranges tiling 0..total, sized by chunk alone."""

    total: int
    workers: int = 1
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.total < 0:
            raise InvalidSpec(f"total must be >= 0, got {self.total}")
        if self.chunk < 1:
            raise InvalidSpec(f"chunk must be >= 1, got {self.chunk}")
        if self.workers < 1:
            raise InvalidSpec(f"workers must be >= 1, got {self.workers}")

    @property
    def count(self) -> int:
        return -(-self.total // self.chunk) if self.total else 0

    @property
    def ranges(self) -> tuple:
        return tuple(
            (start, min(start + self.chunk, self.total))
            for start in range(0, self.total, self.chunk)
        )


def plan_partitions(total: int, workers=None, chunk: int = DEFAULT_CHUNK) -> PartitionPlan:
    return PartitionPlan(total=total, workers=resolve_workers(workers), chunk=chunk)


def run_partitioned(job, plan: PartitionPlan) -> list:
    """Run ``job(partition_index, start, stop)`` over every partition.

    Returns per-partition results ordered by partition index. A raising
    worker surfaces as a single WorkerFailed carrying the partition id.
    """
    ranges = plan.ranges
    if not ranges:
        return []

    def guarded(i):
        start, stop = ranges[i]
        try:
            return job(i, start, stop)
        except Exception as exc:
            raise WorkerFailed(i, exc) from exc

    if plan.workers == 1 or len(ranges) == 1:
        return [guarded(i) for i in range(len(ranges))]
    with ThreadPoolExecutor(max_workers=plan.workers) as pool:
        futures = [pool.submit(guarded, i) for i in range(len(ranges))]
        return [f.result() for f in futures]


def parallel_map_rows(fn, values: np.ndarray, plan: PartitionPlan) -> np.ndarray:
    """Apply a rows-to-vector function partitionwise into one output.

    ``fn`` maps an (m, D) block to an (m,) array. Each partition fills
    its own slice, so the output is identical for any worker count.
    """
    out = np.empty(plan.total)

    def job(_, start, stop):
        out[start:stop] = fn(values[start:stop])

    run_partitioned(job, plan)
    return out


def parallel_map_scores(model, dataset, plan: PartitionPlan) -> np.ndarray:
    """Raw acceptance scores 1/max(p, floor) for every row, in parallel."""
    values = dataset.values if isinstance(dataset, Dataset) else np.asarray(dataset)
    if values.shape[0] != plan.total:
        raise InvalidSpec(
            f"plan covers {plan.total} rows but dataset has {values.shape[0]}"
        )
    return np.exp(parallel_log_scores(model, values, plan))


def parallel_log_scores(model, values: np.ndarray, plan: PartitionPlan) -> np.ndarray:
    """Log of the raw acceptance scores: -max(log p, log floor)."""
    return parallel_map_rows(
        lambda rows: -floored_log_density(model, rows), values, plan
    )


def parallel_reduce_sum(values: np.ndarray, plan: PartitionPlan) -> float:
    """Sum with per-partition partials combined in partition order."""
    values = np.asarray(values)
    if values.shape[0] != plan.total:
        raise InvalidSpec(
            f"plan covers {plan.total} rows but values has {values.shape[0]}"
        )
    partials = run_partitioned(
        lambda _, start, stop: float(np.add.reduce(values[start:stop])), plan
    )
    total = 0.0
    for p in partials:
        total += p
    return total


class StageTimer:
    """Wall-clock accumulator for named pipeline stages."""

    def __init__(self):
        self.seconds = {}

    def time(self, name: str):
        timer = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()
                return self

            def __exit__(self, *exc):
                timer.seconds[name] = timer.seconds.get(name, 0.0) + (
                    time.perf_counter() - self.t0
                )
                return False

        return _Span()
