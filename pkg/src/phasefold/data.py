"""Dataset container, file I/O, deterministic shuffling, rescaling, generators.

The on-disk formats are a plain CSV (header row of column names, comma
delimiter) and the "UPSD" binary layout: magic ``UPSD``, u32 version=1,
u64 N, u32 D, then N*D little-endian f64 values, row-major, no padding.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DataFormatError, EmptyData, InvalidSpec, NonFiniteValue, NonNumericCell

_UPSD_MAGIC = b"UPSD"
_UPSD_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Immutable N x D matrix of finite reals with column names."""

    values: np.ndarray
    column_names: tuple[str, ...] = ()
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.flags.writeable or not v.flags.c_contiguous:
            # copy rather than alias a caller-owned buffer
            v = np.ascontiguousarray(v).copy()
        if v.ndim != 2:
            raise InvalidSpec(f"dataset values must be 2-D, got {v.ndim}-D")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise EmptyData(f"dataset must have N >= 1 and D >= 1, got {v.shape}")
        if not np.isfinite(v).all():
            raise NonFiniteValue("dataset contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        names = tuple(self.column_names) or tuple(f"f{i}" for i in range(v.shape[1]))
        if len(names) != v.shape[1]:
            raise InvalidSpec(f"{len(names)} column names for {v.shape[1]} columns")
        object.__setattr__(self, "column_names", names)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    def take(self, indices: np.ndarray, source_suffix: str = "subset") -> "Dataset":
        """New dataset holding the given rows, in the given order."""
        rows = self.values[np.asarray(indices, dtype=np.intp)]
        rows.flags.writeable = False  # fresh array; freeze to skip the defensive copy
        return Dataset(
            rows,
            self.column_names,
            f"{self.source}:{source_suffix}" if self.source else source_suffix,
        )


@dataclass(frozen=True)
class Permutation:
    """Row order produced by a seeded shuffle; ``order[i]`` is the original row."""

    seed: int
    order: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        order.flags.writeable = False
        object.__setattr__(self, "order", order)


@dataclass(frozen=True)
class ScalingTransform:
    """Per-dimension affine map onto [target_lo, target_hi].

    Dimensions with zero extent on the fitting data map to the range
    midpoint and are inverted back to their fitted constant.
    """

    offset: np.ndarray  # per-dim raw minimum (or constant value)
    scale: np.ndarray  # per-dim multiplier; 0 marks a degenerate dimension
    target_lo: float
    target_hi: float

    @property
    def degenerate(self) -> np.ndarray:
        return self.scale == 0.0

    def forward(self, values: np.ndarray) -> np.ndarray:
        mid = 0.5 * (self.target_lo + self.target_hi)
        out = self.target_lo + (values - self.offset) * self.scale
        return np.where(self.degenerate, mid, out)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.offset + (values - self.target_lo) / self.scale
        return np.where(self.degenerate, self.offset, out)


def load_dataset(path: str, format: str | None = None) -> Dataset:
    """Load a dataset from CSV or UPSD binary; format inferred from suffix."""
    fmt = format or ("csv" if str(path).endswith(".csv") else "binary")
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "binary":
        return _load_binary(path)
    raise InvalidSpec(f"unknown dataset format {fmt!r}")


def save_dataset(dataset: Dataset, path: str, format: str | None = None) -> None:
    fmt = format or ("csv" if str(path).endswith(".csv") else "binary")
    if fmt == "csv":
        _save_csv(dataset, path)
    elif fmt == "binary":
        _save_binary(dataset, path)
    else:
        raise InvalidSpec(f"unknown dataset format {fmt!r}")


def _load_csv(path: str) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise DataFormatError(f"{path}: empty or missing header row")
        names = [part.strip() for part in header.rstrip("\n").split(",")]
        if any(not name for name in names):
            raise DataFormatError(f"{path}: blank column name in header")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split(",")
            if len(cells) != len(names):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(names)} cells, got {len(cells)}"
                )
            try:
                row = [float(c) for c in cells]
            except ValueError as exc:
                raise NonNumericCell(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in row):
                raise NonFiniteValue(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        raise EmptyData(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=np.float64), tuple(names), source=str(path))


def _save_csv(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(dataset.column_names) + "\n")
        for row in dataset.values:
            # repr() gives the shortest decimal that round-trips the float64
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _load_binary(path: str) -> Dataset:
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20 or head[:4] != _UPSD_MAGIC:
            raise DataFormatError(f"{path}: not a UPSD file")
        version, n, d = struct.unpack("<IQI", head[4:20])
        if version != _UPSD_VERSION:
            raise DataFormatError(f"{path}: unsupported UPSD version {version}")
        if n == 0 or d == 0:
            raise EmptyData(f"{path}: declared N={n}, D={d}")
        payload = fh.read(8 * n * d)
        if len(payload) != 8 * n * d:
            raise DataFormatError(f"{path}: truncated payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, d)
    if not np.isfinite(values).all():
        raise NonFiniteValue(f"{path}: non-finite value in payload")
    return Dataset(values, source=str(path))


def _save_binary(dataset: Dataset, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_UPSD_MAGIC)
        fh.write(struct.pack("<IQI", _UPSD_VERSION, dataset.n_rows, dataset.n_dims))
        fh.write(np.ascontiguousarray(dataset.values, dtype="<f8").tobytes())


def shuffle(dataset: Dataset, seed: int) -> tuple[Dataset, Permutation]:
    """Seeded row shuffle; returns the permuted data and the permutation used."""
    order = rng.stream(seed, "shuffle").permutation(dataset.n_rows)
    return dataset.take(order, "shuffled"), Permutation(seed, order)


def random_subset(dataset: Dataset, m: int, seed: int) -> Dataset:
    """M rows drawn uniformly without replacement."""
    if not 1 <= m <= dataset.n_rows:
        raise InvalidSpec(f"subset size {m} outside [1, {dataset.n_rows}]")
    idx = rng.stream(seed, "subset").choice(dataset.n_rows, size=m, replace=False)
    return dataset.take(idx)


def fit_rescaler(dataset: Dataset, lo: float = -4.0, hi: float = 4.0) -> ScalingTransform:
    if not lo < hi:
        raise InvalidSpec(f"need lo < hi, got [{lo}, {hi}]")
    vmin = dataset.values.min(axis=0)
    vmax = dataset.values.max(axis=0)
    extent = vmax - vmin
    # A dimension is degenerate when its extent is zero OR so small that
    # the scale overflows; both collapse to the midpoint constant.
    with np.errstate(divide="ignore", over="ignore"):
        raw = (hi - lo) / extent
    scale = np.where((extent > 0.0) & np.isfinite(raw), raw, 0.0)
    return ScalingTransform(offset=vmin, scale=scale, target_lo=lo, target_hi=hi)


def apply_rescaler(transform: ScalingTransform, dataset: Dataset) -> Dataset:
    return Dataset(
        transform.forward(dataset.values), dataset.column_names, dataset.source + ":rescaled"
    )


# --- synthetic generators ---------------------------------------------------


@dataclass(frozen=True)
class GaussianSpec:
    mean: tuple[float, ...]
    cov_diag: tuple[float, ...]
    n: int


@dataclass(frozen=True)
class MixtureSpec:
    """Weighted diagonal-Gaussian mixture; weights must sum to 1."""

    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    cov_diags: tuple[tuple[float, ...], ...]
    n: int


@dataclass(frozen=True)
class SinusoidSpec:
    """2-D uniform features on [0,1]^2 plus a sinusoidal label column."""

    n: int
    noise: float = 0.0


SINUSOID_PERIODS = (2.5, 1.5)  # oscillation periods across each unit feature extent


def sinusoid_label(features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    w1 = 2.0 * np.pi * SINUSOID_PERIODS[0]
    w2 = 2.0 * np.pi * SINUSOID_PERIODS[1]
    return 10.0 * np.cos(f[..., 0] * w1) * np.sin(f[..., 1] * w2)


def generate(spec, seed: int) -> Dataset:
    """Materialize a synthetic dataset; (spec, seed) fully determine the output."""
    gen = rng.stream(seed, "generate", type(spec).__name__)
    if isinstance(spec, GaussianSpec):
        mean = np.asarray(spec.mean, dtype=np.float64)
        cov = np.asarray(spec.cov_diag, dtype=np.float64)
        if spec.n < 1 or mean.shape != cov.shape or (cov < 0).any():
            raise InvalidSpec("gaussian spec needs n >= 1 and matching nonnegative cov_diag")
        values = mean + gen.standard_normal((spec.n, mean.size)) * np.sqrt(cov)
        return Dataset(values, source=f"gaussian(seed={seed})")
    if isinstance(spec, MixtureSpec):
        w = np.asarray(spec.weights, dtype=np.float64)
        if spec.n < 1 or abs(w.sum() - 1.0) > 1e-9 or (w < 0).any():
            raise InvalidSpec("mixture weights must be nonnegative and sum to 1")
        means = np.asarray(spec.means, dtype=np.float64)
        covs = np.asarray(spec.cov_diags, dtype=np.float64)
        if means.shape != covs.shape or means.shape[0] != w.size:
            raise InvalidSpec("mixture component shapes disagree")
        comp = gen.choice(w.size, size=spec.n, p=w)
        noise = gen.standard_normal((spec.n, means.shape[1]))
        values = means[comp] + noise * np.sqrt(covs[comp])
        return Dataset(values, source=f"mixture(seed={seed})")
    if isinstance(spec, SinusoidSpec):
        if spec.n < 1 or spec.noise < 0:
            raise InvalidSpec("sinusoid spec needs n >= 1 and noise >= 0")
        feats = gen.uniform(0.0, 1.0, size=(spec.n, 2))
        label = sinusoid_label(feats)
        if spec.noise > 0:
            label = label + gen.normal(0.0, spec.noise, size=spec.n)
        values = np.column_stack([feats, label])
        return Dataset(values, ("f1", "f2", "label"), source=f"sinusoid(seed={seed})")
    raise InvalidSpec(f"unknown generator spec {type(spec).__name__}")
