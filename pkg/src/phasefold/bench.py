"""Experiment harness: seeded, resumable-by-cell benchmark runs that
compare selection methods on synthetic surrogates and emit CSV/JSON.

Every experiment is a grid of cells (method x estimator x n x M x
iterations); each cell runs ``repetitions`` times with seeds derived
from (master seed, cell id, repetition), so adding cells or reordering
the grid never changes existing results. All outputs are data files —
plotting stays external.
"""

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import rng
from .baselines import (
    brute_force_max_criterion,
    full_binning_select,
    kmeans,
    random_sample,
    stratified_sample,
)
from .data import Dataset, load_dataset
from .density import TrainConfig
from .errors import InvalidSpec, PhasefoldError
from .metrics import conditional_acceptance_error, distance_criterion, nearest_neighbors
from .selection import (
    SelectionConfig,
    exact_pdf_acceptance,
    predictor_corrector_select,
    select_pass,
)

_LOG_2PI = math.log(2.0 * math.pi)

MIXTURE_WEIGHTS = (0.7, 0.25, 0.05)

# 2D surrogate: three well-separated equal-size modes with strongly
# imbalanced weights.  A uniform-in-phase-space target needs near-equal
# mass per mode, so a density fit from a random subsample must reweight
# the rare mode by more than an order of magnitude — the statistical
# error regime that iterative correction repairs.
MIXTURE2D_COMPONENTS = (
    (0.70, (0.0, 0.0), ((1.0, 0.0), (0.0, 1.0))),
    (0.25, (7.0, 7.0), ((1.0, 0.0), (0.0, 1.0))),
    (0.05, (-7.0, 7.0), ((1.0, 0.0), (0.0, 1.0))),
)

# 5D surrogate: isotropic components at three scales.
_MIX5_SIGMAS = (1.0, 0.6, 0.25)
_MIX5_MEANS = (
    (0.0,) * 5,
    (4.0,) * 5,
    (-3.0, 5.0, -3.0, 5.0, -3.0),
)
MIXTURE5D_COMPONENTS = tuple(
    (w, mu, tuple(tuple(s * s if i == j else 0.0 for j in range(5)) for i in range(5)))
    for w, mu, s in zip(MIXTURE_WEIGHTS, _MIX5_MEANS, _MIX5_SIGMAS)
)


# ------------------------------------------------------------- generators


def _gaussian_pdf(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    diff = x - mean
    log_p = -0.5 * ((diff * diff) / var).sum(axis=1)
    log_p -= 0.5 * (np.log(var).sum() + x.shape[1] * _LOG_2PI)
    return np.exp(log_p)


def _make_normal(mean, var):
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)

    def make(seed: int, n_rows: int):
        gen = rng.stream(seed, "generate", "normal", n_rows)
        values = mean + np.sqrt(var) * gen.normal(size=(n_rows, mean.shape[0]))
        return values, lambda x: _gaussian_pdf(x, mean, var)

    return make


def _make_mixture(components):
    weights = np.array([c[0] for c in components])
    means = np.array([c[1] for c in components])
    covs = np.array([c[2] for c in components])
    chols = np.linalg.cholesky(covs)
    invs = np.linalg.inv(covs)
    _, logdets = np.linalg.slogdet(covs)
    dims = means.shape[1]

    def pdf(x: np.ndarray) -> np.ndarray:
        total = np.zeros(x.shape[0])
        for w, mu, inv, logdet in zip(weights, means, invs, logdets):
            diff = x - mu
            quad = np.einsum("ij,jk,ik->i", diff, inv, diff)
            total += w * np.exp(-0.5 * quad - 0.5 * (logdet + dims * _LOG_2PI))
        return total

    def make(seed: int, n_rows: int):
        gen = rng.stream(seed, "generate", "mixture", dims, n_rows)
        component = gen.choice(weights.shape[0], size=n_rows, p=weights)
        noise = gen.normal(size=(n_rows, dims))
        values = means[component] + np.einsum(
            "nij,nj->ni", chols[component], noise
        )
        return values, pdf

    return make


def _make_uniform(dims: int):
    def make(seed: int, n_rows: int):
        gen = rng.stream(seed, "generate", "uniform", dims, n_rows)
        values = gen.uniform(0.0, 1.0, size=(n_rows, dims))
        return values, lambda x: np.ones(x.shape[0])

    return make


GENERATORS: dict = {
    "normal1d": _make_normal([0.0], [1.0]),
    "gaussian2d": _make_normal([1.0, 1.0], [1.0, 2.0]),
    "small2d": _make_normal([0.0, 0.0], [0.1, 0.1]),
    "mixture2d": _make_mixture(MIXTURE2D_COMPONENTS),
    "mixture5d": _make_mixture(MIXTURE5D_COMPONENTS),
    "uniform2d": _make_uniform(2),
}


def make_dataset(generator: str, seed: int, n_rows: int):
    """Synthetic (values, pdf) pair for a named generator."""
    if generator not in GENERATORS:
        raise InvalidSpec(
            f"unknown generator {generator!r}; have {sorted(GENERATORS)}"
        )
    if n_rows < 1:
        raise InvalidSpec(f"n_rows must be >= 1, got {n_rows}")
    return GENERATORS[generator](seed, n_rows)


# ---------------------------------------------------------- experiment spec


METHODS = (
    "random",
    "stratified",
    "predictor",
    "predictor_corrector",
    "brute_force",
    "full_binning",
    "exact_pdf",
)
_USES_ESTIMATOR = {"predictor", "predictor_corrector"}
_USES_M = {"predictor", "predictor_corrector"}
_USES_ITERS = {"predictor_corrector"}


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: a named grid over methods and parameters."""

    experiment: str
    output_dir: str
    generator: Optional[str] = None
    input_path: Optional[str] = None
    methods: tuple = ("predictor",)
    n_values: tuple = (100,)
    m_values: tuple = (1000,)
    iters_values: tuple = (2,)
    estimators: tuple = ("hist",)
    repetitions: int = 5
    n_rows: int = 10_000
    master_seed: int = 0
    workers: Optional[int] = None
    extras: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.repetitions < 1:
            raise InvalidSpec(f"repetitions must be >= 1, got {self.repetitions}")
        for name in ("methods", "n_values", "m_values", "iters_values", "estimators"):
            if not getattr(self, name):
                raise InvalidSpec(f"{name} grid must not be empty")
        if (self.generator is None) == (self.input_path is None):
            raise InvalidSpec("exactly one of generator or input_path required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise InvalidSpec(f"unknown methods {sorted(unknown)}")
        if "exact_pdf" in self.methods and self.generator is None:
            raise InvalidSpec("exact_pdf method needs a synthetic generator")


@dataclass
class CellRun:
    """A single repetition of one grid cell."""

    cell_id: str
    method: str
    estimator: str
    n: int
    m: int
    iters: int
    rep: int
    seed: int
    indices: np.ndarray
    criterion: float
    seconds: dict
    extra: dict
    result: object = None
    profile: object = None


def _cells(spec: ExperimentSpec):
    seen = set()
    for method in spec.methods:
        for estimator in spec.estimators if method in _USES_ESTIMATOR else ("-",):
            for n in spec.n_values:
                for m in spec.m_values if method in _USES_M else (0,):
                    for iters in spec.iters_values if method in _USES_ITERS else (1,):
                        key = (method, estimator, n, m, iters)
                        if key in seen:
                            continue
                        seen.add(key)
                        cell_id = f"{method}_{estimator}_n{n}_m{m}_it{iters}"
                        yield cell_id, method, estimator, n, m, iters


def _train_config(spec: ExperimentSpec, seed: int) -> TrainConfig:
    overrides = dict(spec.extras.get("train", {}))
    if "hidden" in overrides:
        overrides["hidden"] = tuple(overrides["hidden"])
    overrides["seed"] = seed
    return replace(TrainConfig(), **overrides)


def _run_cell(
    spec: ExperimentSpec,
    values: np.ndarray,
    pdf,
    cell_id: str,
    method: str,
    estimator: str,
    n: int,
    m: int,
    iters: int,
    rep: int,
) -> CellRun:
    seed = rng.derive_key(spec.master_seed, cell_id, rep)
    extras = spec.extras
    seconds = {"step1_s": 0.0, "step2a_s": 0.0, "step2b_s": 0.0}
    extra: dict = {}
    result = None
    profile = None
    started = time.perf_counter()

    if method == "random":
        indices = random_sample(values, n, seed)
    elif method == "stratified":
        model = kmeans(
            values,
            k=int(extras.get("clusters", 40)),
            seed=seed,
            sample_size=extras.get("kmeans_sample", 100_000),
        )
        indices = stratified_sample(values, model, n, seed)
        extra["inertia"] = model.inertia
    elif method == "brute_force":
        indices, best = brute_force_max_criterion(
            values, n, int(extras.get("bf_iters", 10_000)), seed
        )
        extra["best_criterion"] = best
    elif method == "full_binning":
        result = full_binning_select(
            values, n, int(extras.get("bins", 100)), seed
        )
        indices = result.original_indices
    elif method == "exact_pdf":
        profile = exact_pdf_acceptance(pdf, values, n)
        chosen = select_pass(profile.probabilities, n, seed)
        indices = np.sort(chosen)
        extra["alpha"] = profile.alpha
        extra["clipped_fraction"] = profile.clipped_fraction
        if values.shape[1] == 1:
            clipped = profile.probabilities >= 1.0 - 1e-12
            if clipped.any():
                extra["clip_min_abs"] = float(np.abs(values[clipped, 0]).min())
    elif method in ("predictor", "predictor_corrector"):
        config = SelectionConfig(
            n=n,
            m=m,
            iterations=iters if method == "predictor_corrector" else 1,
            estimator=estimator,
            train=_train_config(spec, seed),
            bins=int(extras.get("bins", 100)),
            seed=seed,
            workers=spec.workers,
            keep_probabilities=bool(extras.get("curves", False)),
        )
        result = predictor_corrector_select(Dataset(values), config)
        indices = result.original_indices
        last = result.iterations[-1]
        extra["alpha"] = last.alpha
        extra["clipped_fraction"] = last.clipped_fraction
        if last.final_nll is not None:
            extra["final_nll"] = last.final_nll
        for diag in result.iterations:
            seconds["step1_s"] += diag.step1_s
            seconds["step2a_s"] += diag.step2a_s
            seconds["step2b_s"] += diag.step2b_s
    else:
        raise InvalidSpec(f"unknown method {method!r}")

    criterion = distance_criterion(values[indices], rescale=True, reference=values)
    seconds["total_s"] = time.perf_counter() - started
    return CellRun(
        cell_id=cell_id,
        method=method,
        estimator=estimator,
        n=n,
        m=m,
        iters=iters,
        rep=rep,
        seed=seed,
        indices=indices,
        criterion=criterion,
        seconds=seconds,
        extra=extra,
        result=result,
        profile=profile,
    )


_RESULT_COLUMNS = [
    "experiment", "cell_id", "method", "estimator", "n", "m", "iters",
    "rep", "seed", "criterion", "realized",
    "step1_s", "step2a_s", "step2b_s", "total_s",
]


def _write_results_csv(path: Path, spec: ExperimentSpec, runs: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RESULT_COLUMNS)
        for run in runs:
            writer.writerow(
                [
                    spec.experiment, run.cell_id, run.method, run.estimator,
                    run.n, run.m, run.iters, run.rep, run.seed,
                    repr(run.criterion), run.indices.shape[0],
                    repr(run.seconds["step1_s"]), repr(run.seconds["step2a_s"]),
                    repr(run.seconds["step2b_s"]), repr(run.seconds["total_s"]),
                ]
            )


def _write_summary_csv(path: Path, spec: ExperimentSpec, runs: list) -> None:
    by_cell: dict = {}
    order = []
    for run in runs:
        if run.cell_id not in by_cell:
            by_cell[run.cell_id] = []
            order.append(run.cell_id)
        by_cell[run.cell_id].append(run)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["experiment", "cell_id", "method", "estimator", "n", "m", "iters",
             "reps", "criterion_mean", "criterion_std",
             "step2a_mean_s", "total_mean_s"]
        )
        for cell_id in order:
            cell_runs = by_cell[cell_id]
            crits = np.array([r.criterion for r in cell_runs])
            first = cell_runs[0]
            writer.writerow(
                [
                    spec.experiment, cell_id, first.method, first.estimator,
                    first.n, first.m, first.iters, len(cell_runs),
                    repr(float(crits.mean())),
                    repr(float(crits.std(ddof=1)) if crits.size > 1 else 0.0),
                    repr(float(np.mean([r.seconds["step2a_s"] for r in cell_runs]))),
                    repr(float(np.mean([r.seconds["total_s"] for r in cell_runs]))),
                ]
            )


def summarize(runs: list) -> dict:
    """Mean criterion per cell id (convenience for tests and callers)."""
    sums: dict = {}
    for run in runs:
        sums.setdefault(run.cell_id, []).append(run.criterion)
    return {cell: float(np.mean(vals)) for cell, vals in sums.items()}


def _scaling_writer(path: Path, header: list):
    fh = open(path, "w", encoding="utf-8", newline="")
    writer = csv.writer(fh)
    writer.writerow(header)
    return fh, writer


def _run_row_scaling(spec: ExperimentSpec) -> dict:
    """Wall-time of each stage as the dataset row count grows."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs_all: list = []
    fh, writer = _scaling_writer(
        out / "scaling_rows.csv",
        ["n_rows", "cell_id", "rep", "step1_s", "step2a_s", "step2b_s", "total_s"],
    )
    with fh:
        for n_rows in tuple(spec.extras["scaling_rows"]):
            values, pdf = make_dataset(
                spec.generator,
                rng.derive_key(spec.master_seed, "dataset", n_rows),
                n_rows,
            )
            for cell_id, method, estimator, n, m, iters in _cells(spec):
                for rep in range(spec.repetitions):
                    run = _run_cell(
                        spec, values, pdf, cell_id, method, estimator,
                        n, m, iters, rep,
                    )
                    runs_all.append(run)
                    writer.writerow(
                        [n_rows, cell_id, rep,
                         repr(run.seconds["step1_s"]), repr(run.seconds["step2a_s"]),
                         repr(run.seconds["step2b_s"]), repr(run.seconds["total_s"])]
                    )
    manifest = {
        "experiment": spec.experiment,
        "mode": "row-scaling",
        "row_grid": [int(v) for v in spec.extras["scaling_rows"]],
        "rows_written": len(runs_all),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as mfh:
        json.dump(manifest, mfh, indent=2, sort_keys=True)
    return {"runs": runs_all, "manifest": manifest, "output_dir": str(out)}


def _run_worker_scaling(spec: ExperimentSpec) -> dict:
    """Strong (fixed rows) and weak (rows per worker fixed) scaling."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = tuple(int(w) for w in spec.extras["worker_grid"])
    base = max(spec.n_rows // max(grid), 1)
    runs_all: list = []
    fh, writer = _scaling_writer(
        out / "scaling_workers.csv",
        ["mode", "workers", "n_rows", "cell_id", "rep", "step2a_s", "total_s"],
    )

    def sweep(mode: str, rows_for):
        for w in grid:
            n_rows = rows_for(w)
            values, pdf = make_dataset(
                spec.generator,
                rng.derive_key(spec.master_seed, "dataset", n_rows),
                n_rows,
            )
            wspec = replace(spec, workers=w)
            for cell_id, method, estimator, n, m, iters in _cells(spec):
                for rep in range(spec.repetitions):
                    run = _run_cell(
                        wspec, values, pdf, cell_id, method, estimator,
                        n, m, iters, rep,
                    )
                    runs_all.append(run)
                    writer.writerow(
                        [mode, w, n_rows, cell_id, rep,
                         repr(run.seconds["step2a_s"]),
                         repr(run.seconds["total_s"])]
                    )

    with fh:
        sweep("strong", lambda w: spec.n_rows)
        sweep("weak", lambda w: base * w)
    manifest = {
        "experiment": spec.experiment,
        "mode": "worker-scaling",
        "worker_grid": list(grid),
        "rows_written": len(runs_all),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as mfh:
        json.dump(manifest, mfh, indent=2, sort_keys=True)
    return {"runs": runs_all, "manifest": manifest, "output_dir": str(out)}


def run_experiment(spec: ExperimentSpec) -> dict:
    """Execute every cell, write CSV/JSON artifacts, return the bundle.

    Failures abort only their own cell; whatever completed is flushed
    alongside a manifest naming each failed cell and its error.
    """
    spec.validate()
    if "scaling_rows" in spec.extras:
        return _run_row_scaling(spec)
    if "worker_grid" in spec.extras:
        return _run_worker_scaling(spec)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    if spec.generator is not None:
        values, pdf = make_dataset(
            spec.generator, rng.derive_key(spec.master_seed, "dataset"), spec.n_rows
        )
    else:
        values, pdf = load_dataset(spec.input_path).values, None

    runs: list = []
    failed: list = []
    for cell_id, method, estimator, n, m, iters in _cells(spec):
        for rep in range(spec.repetitions):
            try:
                runs.append(
                    _run_cell(
                        spec, values, pdf, cell_id, method, estimator,
                        n, m, iters, rep,
                    )
                )
            except PhasefoldError as exc:
                failed.append(
                    {
                        "cell_id": cell_id,
                        "rep": rep,
                        "error": type(exc).__name__,
                        "message": str(exc),
                    }
                )
                break  # remaining reps of a deterministic-failing cell

    _write_results_csv(out / "results.csv", spec, runs)
    _write_summary_csv(out / "summary.csv", spec, runs)

    post = _POST_STEPS.get(spec.experiment)
    if post is not None:
        post(spec, values, pdf, runs, out)

    completed = sorted({run.cell_id for run in runs})
    manifest = {
        "experiment": spec.experiment,
        "generator": spec.generator,
        "input_path": spec.input_path,
        "n_rows": int(values.shape[0]),
        "dims": int(values.shape[1]),
        "repetitions": spec.repetitions,
        "master_seed": spec.master_seed,
        "rows_written": len(runs),
        "completed_cells": completed,
        "failed": failed,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return {"runs": runs, "manifest": manifest, "output_dir": str(out)}


# ------------------------------------------------------------- post steps


def _post_fig2(spec, values, pdf, runs, out: Path) -> None:
    """Averaged selected-sample histograms and clip-region stats."""
    bins = 20
    for n in spec.n_values:
        cell_runs = [r for r in runs if r.n == n and r.method == "exact_pdf"]
        if not cell_runs:
            continue
        clip_edges = [r.extra["clip_min_abs"] for r in cell_runs if "clip_min_abs" in r.extra]
        edge = float(np.mean(clip_edges)) if clip_edges else float(np.abs(values).max())
        grid = np.linspace(-edge, edge, bins + 1)
        counts = np.zeros(bins)
        for run in cell_runs:
            x = values[run.indices, 0]
            inside = x[(x >= -edge) & (x <= edge)]
            hist, _ = np.histogram(inside, bins=grid)
            counts += hist
        counts /= len(cell_runs)
        with open(out / f"fig2_hist_n{n}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "mean_count"])
            centers = 0.5 * (grid[:-1] + grid[1:])
            for center, count in zip(centers, counts):
                writer.writerow([repr(float(center)), repr(float(count))])
    with open(out / "fig2_clip.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "mean_clip_min_abs", "mean_clipped_fraction"])
        for n in spec.n_values:
            cell_runs = [r for r in runs if r.n == n and r.method == "exact_pdf"]
            if not cell_runs:
                continue
            edges = [r.extra.get("clip_min_abs", math.nan) for r in cell_runs]
            fracs = [r.extra["clipped_fraction"] for r in cell_runs]
            writer.writerow(
                [n, repr(float(np.nanmean(edges))), repr(float(np.mean(fracs)))]
            )


def _post_error_curves(spec, values, pdf, runs, out: Path) -> None:
    """Per-cell conditional acceptance-error curves, averaged over reps."""
    bins = 20
    for cell_id in sorted({r.cell_id for r in runs}):
        cell_runs = [
            r for r in runs
            if r.cell_id == cell_id and r.result is not None
            and r.result.probabilities is not None
        ]
        if not cell_runs:
            continue
        rel_sum = np.zeros(bins)
        rel_count = np.zeros(bins)
        centers = None
        for run in cell_runs:
            order = run.result.permutation.order
            curve = conditional_acceptance_error(
                pdf, run.result.probabilities, values[order],
                bins=bins, target=run.n,
            )
            centers = curve.centers
            filled = ~curve.empty
            rel_sum[filled] += curve.rel_mean[filled]
            rel_count[filled] += 1
        with open(out / f"fig5_{cell_id}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "mean_rel_err", "reps_with_data"])
            for center, total, cnt in zip(centers, rel_sum, rel_count):
                cell = repr(float(total / cnt)) if cnt else ""
                writer.writerow([repr(float(center)), cell, int(cnt)])


def _post_nll_history(spec, values, pdf, runs, out: Path) -> None:
    with open(out / "fig6_nll.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "rep", "iteration", "step", "nll"])
        for run in runs:
            if run.result is None:
                continue
            for diag in run.result.iterations:
                if not diag.nll_history:
                    continue
                for step, nll in enumerate(diag.nll_history, start=1):
                    writer.writerow(
                        [run.cell_id, run.rep, diag.iteration, step, repr(float(nll))]
                    )


def _post_nn_distances(spec, values, pdf, runs, out: Path) -> None:
    """Nearest-neighbor distance samples of the first repetition per cell."""
    for cell_id in sorted({r.cell_id for r in runs}):
        first = next(r for r in runs if r.cell_id == cell_id)
        _, distances = nearest_neighbors(values[first.indices])
        with open(out / f"fig7_nn_{first.method}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["nn_distance"])
            for d in distances:
                writer.writerow([repr(float(d))])


def _post_scatter(spec, values, pdf, runs, out: Path) -> None:
    """First-repetition selected points per cell, for scatter plots."""
    for cell_id in sorted({r.cell_id for r in runs}):
        first = next(r for r in runs if r.cell_id == cell_id)
        chosen = values[first.indices]
        with open(out / f"scatter_{cell_id}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{d}" for d in range(chosen.shape[1])])
            for row in chosen:
                writer.writerow([repr(float(v)) for v in row])


def _post_normalized(spec, values, pdf, runs, out: Path) -> None:
    """Summary with criteria normalized by the first grid cell per method."""
    means = summarize(runs)
    reference: dict = {}
    for run in runs:
        reference.setdefault(run.method, means[run.cell_id])
    with open(out / "normalized.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "method", "m", "iters", "criterion_mean", "normalized"])
        done = set()
        for run in runs:
            if run.cell_id in done:
                continue
            done.add(run.cell_id)
            mean = means[run.cell_id]
            writer.writerow(
                [run.cell_id, run.method, run.m, run.iters,
                 repr(mean), repr(mean / reference[run.method])]
            )


_POST_STEPS: dict = {
    "fig2": _post_fig2,
    "fig5": _post_error_curves,
    "fig6": _post_nll_history,
    "fig7": _post_nn_distances,
    "appendix-a": _post_scatter,
    "sensitivity-m": _post_normalized,
    "sensitivity-iters": _post_normalized,
}


# ---------------------------------------------------------------- presets


def _preset_fig2(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="fig2", output_dir=output_dir, generator="normal1d",
        methods=("exact_pdf",), n_values=(100, 1000), repetitions=100,
        n_rows=10_000, **kw,
    )


def _preset_fig5(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="fig5", output_dir=output_dir, generator="gaussian2d",
        methods=("predictor_corrector",), n_values=(1000,), m_values=(10_000,),
        iters_values=(1, 2), estimators=("flow",), repetitions=5,
        n_rows=100_000,
        extras={"curves": True, "train": {"steps": 1200, "batch": 512, "lr": 2e-3}},
        **kw,
    )


def _preset_fig6(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="fig6", output_dir=output_dir, generator="gaussian2d",
        methods=("predictor_corrector",), n_values=(1000,), m_values=(10_000,),
        iters_values=(2,), estimators=("flow",), repetitions=3,
        n_rows=100_000,
        extras={"train": {"steps": 1200, "batch": 512, "lr": 2e-3}},
        **kw,
    )


def _preset_fig7(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="fig7", output_dir=output_dir, generator="small2d",
        methods=("brute_force", "random"), n_values=(100,), repetitions=5,
        n_rows=10_000, extras={"bf_iters": 10_000}, **kw,
    )


def _preset_table1(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="table1", output_dir=output_dir, generator="mixture2d",
        methods=("random", "stratified", "predictor", "predictor_corrector"),
        n_values=(1000,), m_values=(100_000,), iters_values=(2, 3),
        estimators=("flow",), repetitions=5, n_rows=1_000_000,
        extras={
            "clusters": 40,
            "train": {"steps": 100, "batch": 1024, "lr": 1e-3},
        },
        **kw,
    )


def _preset_table1_bins(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="table1-bins", output_dir=output_dir, generator="mixture2d",
        methods=("random", "stratified", "predictor", "predictor_corrector"),
        n_values=(1000,), m_values=(100_000,), iters_values=(2, 3),
        estimators=("hist",), repetitions=5, n_rows=1_000_000,
        extras={"clusters": 40, "bins": 100}, **kw,
    )


def _preset_table2(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="table2", output_dir=output_dir, generator="mixture5d",
        methods=("random", "predictor_corrector", "full_binning"),
        n_values=(1000,), m_values=(100_000,), iters_values=(2,),
        estimators=("hist",), repetitions=5, n_rows=1_000_000,
        extras={"bins": 10}, **kw,
    )


def _preset_sensitivity_m(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="sensitivity-m", output_dir=output_dir, generator="mixture2d",
        methods=("predictor_corrector",), n_values=(1000,),
        m_values=(2_500, 10_000, 40_000), iters_values=(2,),
        estimators=("hist",), repetitions=5, n_rows=500_000,
        extras={"bins": 100}, **kw,
    )


def _preset_sensitivity_iters(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="sensitivity-iters", output_dir=output_dir,
        generator="mixture2d", methods=("predictor_corrector",),
        n_values=(1000,), m_values=(10_000,), iters_values=(1, 2, 3, 4),
        estimators=("hist",), repetitions=5, n_rows=500_000,
        extras={"bins": 100}, **kw,
    )


def _preset_scaling_n(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="scaling-n", output_dir=output_dir, generator="gaussian2d",
        methods=("predictor",), n_values=(1000,), m_values=(10_000,),
        estimators=("hist",), repetitions=3, n_rows=1_000_000,
        extras={"bins": 100, "scaling_rows": (100_000, 1_000_000)}, **kw,
    )


def _preset_scaling_workers(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="scaling-workers", output_dir=output_dir,
        generator="gaussian2d", methods=("predictor",), n_values=(1000,),
        m_values=(10_000,), estimators=("hist",), repetitions=3,
        n_rows=1_000_000, extras={"bins": 100, "worker_grid": (1, 2, 4, 8)},
        **kw,
    )


def _preset_appendix_a(output_dir: str, **kw) -> ExperimentSpec:
    return ExperimentSpec(
        experiment="appendix-a", output_dir=output_dir, generator="mixture2d",
        methods=("random", "predictor_corrector"), n_values=(2000,),
        m_values=(20_000,), iters_values=(2,), estimators=("hist",),
        repetitions=1, n_rows=200_000, extras={"bins": 100}, **kw,
    )


PRESETS: dict = {
    "fig2": _preset_fig2,
    "fig5": _preset_fig5,
    "fig6": _preset_fig6,
    "fig7": _preset_fig7,
    "table1": _preset_table1,
    "table1-bins": _preset_table1_bins,
    "table2": _preset_table2,
    "sensitivity-m": _preset_sensitivity_m,
    "sensitivity-iters": _preset_sensitivity_iters,
    "scaling-n": _preset_scaling_n,
    "scaling-workers": _preset_scaling_workers,
    "appendix-a": _preset_appendix_a,
}


def preset(name: str, output_dir: str, **overrides) -> ExperimentSpec:
    """Build a named preset, applying field overrides."""
    if name not in PRESETS:
        raise InvalidSpec(f"unknown experiment {name!r}; have {sorted(PRESETS)}")
    spec = PRESETS[name](output_dir)
    if overrides:
        spec = replace(spec, **overrides)
    return spec
