"""Command-line front end.

Subcommands: generate, fit, sample, metric, baseline, bench. Flags may
also be supplied through ``--config FILE`` holding flat ``key=value``
lines; explicit flags override the file. ``PHASEFOLD_WORKERS`` sets the
default worker count. Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric
failure, 5 memory budget.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, bench, rng
from .baselines import (
    brute_force_max_criterion,
    full_binning_select,
    kmeans,
    random_sample,
    stratified_sample,
)
from .data import Dataset, load_dataset, random_subset, save_dataset
from .density import TrainConfig, fit_flow, fit_histogram, save_model
from .errors import InvalidSpec, PhasefoldError
from .metrics import distance_criterion, nearest_neighbors
from .report import report_from_result, save_report
from .selection import SelectionConfig, predictor_corrector_select

_USAGE_EXIT = 2
_IO_EXIT = 3


def _read_config_file(path: str) -> dict:
    """Flat key=value file; '#' starts a comment; keys mirror flag names."""
    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidSpec(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not key:
            raise InvalidSpec(f"{path}:{lineno}: empty key")
        values[key] = _convert(value)
    return values


def _convert(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


_CONFIG_INT_KEYS = frozenset(
    {"rows", "seed", "bins", "m", "steps", "n", "iters", "nprime",
     "workers", "clusters", "reps"}
)
_CONFIG_STR_KEYS = frozenset(
    {"input", "generate", "out", "estimator", "report", "indices_out",
     "method", "experiment"}
)


def _apply_config(args) -> None:
    """Fill flags the command line left unset from the config file."""
    path = getattr(args, "config", None)
    if not path:
        return
    for key, value in _read_config_file(path).items():
        if key == "indices":
            value = [str(value)]
        elif key in _CONFIG_INT_KEYS:
            if not isinstance(value, int):
                raise InvalidSpec(f"config key {key} must be an integer, got {value!r}")
        elif key in _CONFIG_STR_KEYS:
            value = str(value)
        else:
            raise InvalidSpec(f"unknown config key {key!r}")
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value file; flags override it")
    parser.add_argument("--input", help="dataset file (.csv or .upsd)")
    parser.add_argument("--generate", help="synthetic generator name")
    parser.add_argument("--rows", type=int, help="rows for --generate (default 10000)")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasefold",
        description="Uniform-in-phase-space data selection toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"phasefold {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    _add_common(p)

    p = sub.add_parser("fit", help="fit a density estimator and save it")
    _add_common(p)
    p.add_argument("--estimator", choices=("flow", "hist"))
    p.add_argument("--bins", type=int, help="histogram bins per dimension")
    p.add_argument("--m", type=int, help="fit on a random subset of this size")
    p.add_argument("--steps", type=int, help="flow training steps")

    p = sub.add_parser("sample", help="select n near-uniform points")
    _add_common(p)
    p.add_argument("--n", type=int, help="points to select (required)")
    p.add_argument("--m", type=int, help="working-set size")
    p.add_argument("--iters", type=int, help="refinement iterations (default 1)")
    p.add_argument("--estimator", choices=("flow", "hist"))
    p.add_argument("--bins", type=int)
    p.add_argument("--nprime", type=int, help="calibration subset size")
    p.add_argument("--workers", type=int)
    p.add_argument("--steps", type=int, help="flow training steps")
    p.add_argument("--report", help="write a JSON run report here")
    p.add_argument("--indices-out", help="write selected row indices as CSV")

    p = sub.add_parser("metric", help="nearest-neighbor distance criterion")
    _add_common(p)
    p.add_argument(
        "--indices", action="append", default=None,
        help="selection file (one row index per line); repeatable",
    )

    p = sub.add_parser("baseline", help="run a baseline selector")
    _add_common(p)
    p.add_argument(
        "--method",
        choices=("random", "stratified", "brute_force", "full_binning"),
    )
    p.add_argument("--n", type=int, help="points to select (required)")
    p.add_argument("--iters", type=int, help="brute-force restarts")
    p.add_argument("--clusters", type=int, help="k for stratified sampling")
    p.add_argument("--bins", type=int, help="bins per dimension for full_binning")

    p = sub.add_parser("bench", help="run a named benchmark experiment")
    _add_common(p)
    p.add_argument("--experiment", help=f"one of {sorted(bench.PRESETS)}")
    p.add_argument("--reps", type=int, help="override repetitions")
    p.add_argument("--workers", type=int)
    p.add_argument("--list", action="store_true", help="list experiments and exit")

    return parser


def _require(args, name: str):
    value = getattr(args, name, None)
    if value is None:
        raise InvalidSpec(f"missing required flag --{name.replace('_', '-')}")
    return value


def _load_points(args) -> tuple:
    """(values, pdf_or_None) from --input or --generate."""
    has_input = getattr(args, "input", None) is not None
    has_gen = getattr(args, "generate", None) is not None
    if has_input == has_gen:
        raise InvalidSpec("exactly one of --input or --generate is required")
    if has_input:
        return load_dataset(args.input).values, None
    rows = getattr(args, "rows", None) or 10_000
    seed = getattr(args, "seed", None) or 0
    return bench.make_dataset(args.generate, rng.derive_key(seed, "dataset"), rows)


def _cmd_generate(args) -> int:
    name = _require(args, "generate")
    out = _require(args, "out")
    rows = args.rows or 10_000
    values, _ = bench.make_dataset(name, rng.derive_key(args.seed or 0, "dataset"), rows)
    save_dataset(Dataset(values), out)
    print(f"wrote {values.shape[0]} x {values.shape[1]} dataset to {out}")
    return 0


def _cmd_fit(args) -> int:
    out = _require(args, "out")
    values, _ = _load_points(args)
    ds = Dataset(values)
    seed = args.seed or 0
    if args.m is not None:
        ds = random_subset(ds, args.m, rng.derive_key(seed, "subset"))
    estimator = args.estimator or "flow"
    if estimator == "hist":
        model = fit_histogram(ds.values, args.bins or 100)
        print(f"fit histogram ({args.bins or 100} bins/dim) on {ds.values.shape[0]} rows")
    else:
        train = TrainConfig(seed=rng.derive_key(seed, "fit", 1))
        if args.steps is not None:
            train = replace(train, steps=args.steps)
        model, history = fit_flow(ds.values, train)
        print(
            f"fit flow on {ds.values.shape[0]} rows; "
            f"final training NLL {history[-1]:.4f}"
        )
    save_model(model, out)
    print(f"saved model to {out}")
    return 0


def _selection_config(args, total_rows: int) -> SelectionConfig:
    n = _require(args, "n")
    m = args.m if args.m is not None else min(total_rows, max(10_000, 10 * n))
    train = TrainConfig()
    if getattr(args, "steps", None) is not None:
        train = replace(train, steps=args.steps)
    return SelectionConfig(
        n=n,
        m=m,
        iterations=args.iters if args.iters is not None else 1,
        n_prime=args.nprime,
        estimator=args.estimator or "flow",
        train=train,
        bins=args.bins or 100,
        seed=args.seed or 0,
        workers=args.workers,
    )


def _cmd_sample(args) -> int:
    values, _ = _load_points(args)
    config = _selection_config(args, values.shape[0])
    result = predictor_corrector_select(Dataset(values), config)
    indices = result.original_indices
    metrics = None
    summary = (
        f"selected {indices.shape[0]} of {values.shape[0]} rows "
        f"({result.method}, {config.iterations} iteration(s))"
    )
    if indices.shape[0] >= 2:
        criterion = distance_criterion(values[indices], rescale=True, reference=values)
        metrics = {"distance_criterion": criterion}
        summary += f"; criterion {criterion:.6g}"
    print(summary)
    if args.out:
        save_dataset(Dataset(values[np.sort(indices)]), args.out)
        print(f"wrote selected rows to {args.out}")
    if args.indices_out:
        np.savetxt(args.indices_out, np.sort(indices), fmt="%d")
        print(f"wrote selected indices to {args.indices_out}")
    if args.report:
        report = report_from_result(result, __version__, metrics=metrics)
        save_report(report, args.report)
        print(f"wrote run report to {args.report}")
    return 0


def _load_indices(path: str, total: int) -> np.ndarray:
    try:
        raw = np.loadtxt(path, ndmin=1)
    except (OSError, ValueError) as exc:
        raise InvalidSpec(f"cannot read indices from {path}: {exc}") from exc
    if raw.ndim > 1:
        raw = raw[:, 0]
    if raw.size == 0:
        raise InvalidSpec(f"{path} holds no indices")
    if not np.array_equal(raw, np.floor(raw)):
        raise InvalidSpec(f"{path}: indices must be integers")
    if raw.min() < 0 or raw.max() >= total:
        raise InvalidSpec(
            f"{path}: index {int(raw.min() if raw.min() < 0 else raw.max())} "
            f"out of range for {total} rows"
        )
    return raw.astype(np.int64)


def _cmd_metric(args) -> int:
    values, _ = _load_points(args)
    files = args.indices or []
    if not files:
        crit = distance_criterion(values, rescale=True)
        print(f"criterion {crit!r} over {values.shape[0]} points")
        if args.out:
            _, distances = nearest_neighbors(values)
            np.savetxt(args.out, distances, header="nn_distance", comments="")
            print(f"wrote nearest-neighbor distances to {args.out}")
        return 0
    crits = []
    first_selected = None
    for path in files:
        idx = _load_indices(path, values.shape[0])
        selected = values[idx]
        if first_selected is None:
            first_selected = selected
        crit = distance_criterion(selected, rescale=True, reference=values)
        crits.append(crit)
        print(f"{path}: criterion {crit!r} ({idx.shape[0]} points)")
    if len(crits) > 1:
        arr = np.array(crits)
        print(
            f"ensemble: mean {float(arr.mean())!r} "
            f"+/- {float(arr.std(ddof=1))!r} ({len(crits)} selections)"
        )
    if args.out:
        _, distances = nearest_neighbors(first_selected)
        np.savetxt(args.out, distances, header="nn_distance", comments="")
        print(f"wrote nearest-neighbor distances to {args.out}")
    return 0


def _cmd_baseline(args) -> int:
    values, _ = _load_points(args)
    n = _require(args, "n")
    method = args.method or "random"
    seed = args.seed or 0
    if method == "random":
        indices = random_sample(values, n, seed)
    elif method == "stratified":
        model = kmeans(values, k=args.clusters or 40, seed=seed, sample_size=100_000)
        indices = stratified_sample(values, model, n, seed)
    elif method == "brute_force":
        indices, _best = brute_force_max_criterion(values, n, args.iters or 1000, seed)
    else:
        result = full_binning_select(values, n, args.bins or 100, seed)
        indices = result.original_indices
    criterion = distance_criterion(values[indices], rescale=True, reference=values)
    print(
        f"{method}: selected {indices.shape[0]} of {values.shape[0]} rows; "
        f"criterion {criterion:.6g}"
    )
    if args.out:
        save_dataset(Dataset(values[np.sort(indices)]), args.out)
        print(f"wrote selected rows to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    if args.list:
        for name in sorted(bench.PRESETS):
            print(name)
        return 0
    name = _require(args, "experiment")
    out = _require(args, "out")
    overrides: dict = {}
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if args.rows is not None:
        overrides["n_rows"] = args.rows
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    spec = bench.preset(name, out, **overrides)
    bundle = bench.run_experiment(spec)
    for cell, mean in sorted(bench.summarize(bundle["runs"]).items()):
        print(f"{cell}: mean criterion {mean!r}")
    failed = bundle["manifest"]["failed"] if "failed" in bundle["manifest"] else []
    if failed:
        print(f"{len(failed)} cell(s) failed; see manifest.json", file=sys.stderr)
    print(f"wrote experiment outputs to {bundle['output_dir']}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "sample": _cmd_sample,
    "metric": _cmd_metric,
    "baseline": _cmd_baseline,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return _USAGE_EXIT
        _apply_config(args)
        return _COMMANDS[args.command](args)
    except PhasefoldError as exc:
        print(f"error ({exc.code}): {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return _IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
