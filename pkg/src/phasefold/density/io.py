"""Binary checkpoints for fitted density models.

Flow checkpoints use magic ``UPSF``, histogram checkpoints ``UPSH``.
Both are self-describing: a fixed header carries the architecture, then
parameters follow as little-endian f64, so a fit can be reused across
program invocations.
"""

import math
import struct

import numpy as np

from ..errors import DataFormatError
from .flow import FlowDensity, TrainConfig, build_flow
from .histogram import HistogramDensity

FLOW_MAGIC = b"UPSF"
HIST_MAGIC = b"UPSH"
VERSION = 1

_TRANSFORM_CODES = {"affine": 0, "rqs": 1}
_TRANSFORM_NAMES = {v: k for k, v in _TRANSFORM_CODES.items()}


def _read_exact(handle, size: int, what: str) -> bytes:
    buf = handle.read(size)
    if len(buf) != size:
        raise DataFormatError(f"checkpoint truncated while reading {what}")
    return buf


def _read_f64(handle, count: int, what: str) -> np.ndarray:
    return np.frombuffer(_read_exact(handle, 8 * count, what), dtype="<f8").copy()


def _write_flow(model: FlowDensity, handle) -> None:
    cfg = model.config
    d = model.dims
    handle.write(FLOW_MAGIC)
    handle.write(
        struct.pack(
            "<IIBBH",
            VERSION,
            d,
            _TRANSFORM_CODES[cfg.transform],
            1 if d == 1 else 0,
            0,
        )
    )
    handle.write(struct.pack("<IId", len(model.layers), cfg.knots, cfg.bound))
    handle.write(struct.pack("<I", len(cfg.hidden)))
    for width in cfg.hidden:
        handle.write(struct.pack("<I", width))
    final = model.final_nll if model.final_nll is not None else math.nan
    handle.write(struct.pack("<Qd", model.trained_on, final))
    handle.write(model.mean.astype("<f8").tobytes())
    handle.write(model.std.astype("<f8").tobytes())
    for layer in model.layers:
        for p in layer.parameters():
            flat = p.value.ravel()
            handle.write(struct.pack("<Q", flat.size))
            handle.write(flat.astype("<f8").tobytes())


def _read_flow(handle) -> FlowDensity:
    version, dims, t_code, _elementwise, _pad = struct.unpack(
        "<IIBBH", _read_exact(handle, 12, "flow header")
    )
    if version != VERSION:
        raise DataFormatError(f"unsupported flow checkpoint version {version}")
    if t_code not in _TRANSFORM_NAMES:
        raise DataFormatError(f"unknown transform code {t_code}")
    n_layers, knots, bound = struct.unpack(
        "<IId", _read_exact(handle, 16, "flow architecture")
    )
    (n_hidden,) = struct.unpack("<I", _read_exact(handle, 4, "hidden count"))
    hidden = tuple(
        struct.unpack("<I", _read_exact(handle, 4, "hidden width"))[0]
        for _ in range(n_hidden)
    )
    trained_on, final_nll = struct.unpack(
        "<Qd", _read_exact(handle, 16, "training stats")
    )
    mean = _read_f64(handle, dims, "mean")
    std = _read_f64(handle, dims, "std")

    config = TrainConfig(
        layers=max(n_layers, 1),
        knots=knots,
        hidden=hidden,
        transform=_TRANSFORM_NAMES[t_code],
        bound=bound,
    )
    model = build_flow(dims, config)
    model.mean = mean
    model.std = std
    model.trained_on = trained_on
    model.final_nll = None if math.isnan(final_nll) else final_nll
    if len(model.layers) != n_layers:
        raise DataFormatError("layer count does not match dimensionality")
    for layer in model.layers:
        for p in layer.parameters():
            (count,) = struct.unpack("<Q", _read_exact(handle, 8, "parameter count"))
            if count != p.value.size:
                raise DataFormatError("parameter block size mismatch")
            p.value = _read_f64(handle, count, "parameters").reshape(p.value.shape)
    extra = handle.read(1)
    if extra:
        raise DataFormatError("trailing bytes after flow checkpoint")
    return model


def _write_histogram(model: HistogramDensity, handle) -> None:
    handle.write(HIST_MAGIC)
    handle.write(
        struct.pack("<IIIQ", VERSION, model.dims, model.bins_per_dim, model.trained_on)
    )
    handle.write(model.lower.astype("<f8").tobytes())
    handle.write(model.upper.astype("<f8").tobytes())
    handle.write(model.masses.astype("<f8").tobytes())


def _read_histogram(handle) -> HistogramDensity:
    version, dims, bins, trained_on = struct.unpack(
        "<IIIQ", _read_exact(handle, 20, "histogram header")
    )
    if version != VERSION:
        raise DataFormatError(f"unsupported histogram checkpoint version {version}")
    lower = _read_f64(handle, dims, "lower bounds")
    upper = _read_f64(handle, dims, "upper bounds")
    masses = _read_f64(handle, bins**dims, "masses")
    masses.flags.writeable = False
    extra = handle.read(1)
    if extra:
        raise DataFormatError("trailing bytes after histogram checkpoint")
    return HistogramDensity(
        bins_per_dim=bins, lower=lower, upper=upper, masses=masses, trained_on=trained_on
    )


def save_model(model, path) -> None:
    """Write a fitted density model to a checkpoint file."""
    with open(path, "wb") as handle:
        if isinstance(model, FlowDensity):
            _write_flow(model, handle)
        elif isinstance(model, HistogramDensity):
            _write_histogram(model, handle)
        else:
            raise DataFormatError(f"cannot checkpoint object of type {type(model)!r}")


def load_model(path):
    """Read a checkpoint written by `save_model`."""
    with open(path, "rb") as handle:
        magic = _read_exact(handle, 4, "magic")
        if magic == FLOW_MAGIC:
            return _read_flow(handle)
        if magic == HIST_MAGIC:
            return _read_histogram(handle)
        raise DataFormatError(f"unrecognized checkpoint magic {magic!r}")
