"""Run reports: a lossless JSON record of everything a selection run
did — configuration, seeds, per-iteration calibration and fit history,
realized counts, metric values, and stage timings."""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .density import DENSITY_FLOOR
from .errors import InvalidSpec
from .selection import SelectionResult


@dataclass
class RunReport:
    """JSON-serializable account of one selection run.

    Every numeric field is finite; empty-bin curve entries are ``None``
    rather than NaN so the JSON stays standard.
    """

    method: str
    version: str
    seed: int
    config: dict
    iterations: list
    realized_count: int
    timings: dict
    metrics: dict = field(default_factory=dict)
    density_floor: float = DENSITY_FLOOR


def _jsonable(value):
    """Recursively convert to plain JSON types, rejecting non-finite
    numbers and unknown objects."""
    if value is None or isinstance(value, (bool, str, int)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidSpec(f"non-finite value {value!r} in report")
        return value
    if hasattr(value, "item") and not hasattr(value, "shape"):  # numpy scalar
        return _jsonable(value.item())
    if hasattr(value, "tolist"):  # numpy array
        return _jsonable(value.tolist())
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _jsonable(dataclasses.asdict(value))
    raise InvalidSpec(f"cannot serialize {type(value).__name__} into a report")


def curve_payload(curve) -> dict:
    """Conditional-error curve as JSON-safe lists; empty bins are None."""
    rel = [None if math.isnan(v) else float(v) for v in curve.rel_mean]
    ab = [None if math.isnan(v) else float(v) for v in curve.abs_mean]
    return {
        "bin_centers": [float(v) for v in curve.centers],
        "rel_err": rel,
        "abs_err": ab,
        "counts": [int(v) for v in curve.counts],
    }


def report_from_result(
    result: SelectionResult,
    version: str,
    metrics: Optional[dict] = None,
) -> RunReport:
    """Assemble a report from a selection outcome."""
    iterations = []
    totals = {"step1_s": 0.0, "step2a_s": 0.0, "step2b_s": 0.0}
    for diag in result.iterations:
        entry = {
            "iteration": diag.iteration,
            "alpha": diag.alpha,
            "log_alpha": diag.log_alpha,
            "clipped_fraction": diag.clipped_fraction,
            "realized": diag.realized,
            "nll_history": diag.nll_history,
            "final_nll": diag.final_nll,
            "step1_s": diag.step1_s,
            "step2a_s": diag.step2a_s,
            "step2b_s": diag.step2b_s,
        }
        iterations.append(_jsonable(entry))
        for key in totals:
            totals[key] += entry[key]
    totals["total_s"] = sum(totals.values())
    return RunReport(
        method=result.method,
        version=version,
        seed=result.config.seed,
        config=_jsonable(dataclasses.asdict(result.config)),
        iterations=iterations,
        realized_count=result.realized,
        timings=_jsonable(totals),
        metrics=_jsonable(metrics or {}),
    )


def to_json(report: RunReport) -> str:
    payload = _jsonable(dataclasses.asdict(report))
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)


def from_json(text: str) -> RunReport:
    raw = json.loads(text)
    known = {f.name for f in dataclasses.fields(RunReport)}
    unknown = set(raw) - known
    if unknown:
        raise InvalidSpec(f"unknown report fields: {sorted(unknown)}")
    missing = known - set(raw)
    if missing:
        raise InvalidSpec(f"missing report fields: {sorted(missing)}")
    return RunReport(**raw)


def save_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(report))
        fh.write("\n")


def load_report(path: str) -> RunReport:
    with open(path, "r", encoding="utf-8") as fh:
        return from_json(fh.read())
