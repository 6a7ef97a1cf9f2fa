"""Coupling-layer normalizing flow trained by maximum likelihood.

The flow maps standardized data to a standard normal base through a
stack of coupling layers with alternating binary masks. Each layer
transforms half the coordinates elementwise, conditioned on the other
half through a small fully connected network, using either a monotone
rational-quadratic spline on [-bound, bound] with identity tails or a
global affine map. One dimensional data uses a single unconditioned
elementwise transform instead (coupling needs at least two dims).

Zero conditioner output gives the identity transform exactly, and the
final conditioner layer is zero-initialized, so an untrained flow is
the standardizer alone.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import rng
from ..data import Dataset
from ..errors import InvalidSpec, TrainingDiverged
from . import autodiff as ad

# Smallest allowed knot spacing as a fraction of the box, so bins never
# collapse and spline logs stay finite.
MIN_BIN_FRACTION = 1e-3

# softplus(x + shift) == 1 at x == 0: zero raw params give unit slopes.
_DERIV_SHIFT = math.log(math.e - 1.0)

# Affine coupling log-scales are squashed into [-clamp, clamp].
_LOG_SCALE_CLAMP = 3.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

EVAL_CHUNK = 65536


@dataclass(frozen=True)
class TrainConfig:
    """Flow architecture and optimizer settings."""

    steps: int = 12000
    batch: int = 1024
    lr: float = 1e-3
    lr_decay: float = 0.1
    layers: int = 4
    knots: int = 8
    hidden: tuple = (32, 32)
    transform: str = "rqs"
    bound: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1:
            raise InvalidSpec(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise InvalidSpec(f"batch must be >= 1, got {self.batch}")
        if self.layers < 1:
            raise InvalidSpec(f"layers must be >= 1, got {self.layers}")
        if self.knots < 2:
            raise InvalidSpec(f"knots must be >= 2, got {self.knots}")
        if self.bound <= 0:
            raise InvalidSpec(f"bound must be positive, got {self.bound}")
        if self.transform not in ("rqs", "affine"):
            raise InvalidSpec(f"unknown transform {self.transform!r}")
        if not (0 < self.lr_decay <= 1):
            raise InvalidSpec(f"lr_decay must be in (0, 1], got {self.lr_decay}")


def _params_per_dim(transform: str, knots: int) -> int:
    if transform == "affine":
        return 2
    return 3 * knots - 1


def _rqs_apply(u, raw, knots: int, bound: float):
    """Monotone rational-quadratic spline, identity outside the box.

    `u` is a flat Var of inputs, `raw` a (len(u), 3K-1) Var of unpacked
    spline parameters. Returns (output, log-derivative) Vars.
    """
    m = u.value.shape[0]
    k = knots
    span = 2.0 * bound

    raw_w = ad.take_cols(raw, np.arange(k))
    raw_h = ad.take_cols(raw, np.arange(k, 2 * k))
    raw_d = ad.take_cols(raw, np.arange(2 * k, 3 * k - 1))

    scale = 1.0 - k * MIN_BIN_FRACTION
    widths = ad.add(MIN_BIN_FRACTION, ad.mul(scale, ad.softmax(raw_w)))
    heights = ad.add(MIN_BIN_FRACTION, ad.mul(scale, ad.softmax(raw_h)))

    edge = np.full((m, 1), -bound)
    far_edge = np.full((m, 1), bound)

    def knot_positions(fractions):
        interior = ad.add(-bound, ad.mul(span, ad.cumsum(fractions, 1)))
        # Pin the outer knots exactly so tails join the identity.
        return ad.concat(
            [ad.const(edge), ad.take_cols(interior, np.arange(k - 1)), ad.const(far_edge)],
            axis=1,
        )

    kx = knot_positions(widths)
    ky = knot_positions(heights)
    ones = np.ones((m, 1))
    derivs = ad.concat(
        [ad.const(ones), ad.softplus(ad.add(raw_d, _DERIV_SHIFT)), ad.const(ones)],
        axis=1,
    )

    inside = np.abs(u.value) <= bound
    uc = ad.clip(u, -bound, bound)
    idx = np.clip(
        np.sum(kx.value[:, 1:k] <= uc.value[:, None], axis=1), 0, k - 1
    ).astype(np.int64)

    x0 = ad.gather_rows(kx, idx)
    x1 = ad.gather_rows(kx, idx + 1)
    y0 = ad.gather_rows(ky, idx)
    y1 = ad.gather_rows(ky, idx + 1)
    d0 = ad.gather_rows(derivs, idx)
    d1 = ad.gather_rows(derivs, idx + 1)

    dx = ad.sub(x1, x0)
    dy = ad.sub(y1, y0)
    slope = ad.div(dy, dx)
    xi = ad.div(ad.sub(uc, x0), dx)
    xi_c = ad.sub(1.0, xi)
    cross = ad.mul(xi, xi_c)

    den = ad.add(slope, ad.mul(ad.sub(ad.add(d0, d1), ad.mul(2.0, slope)), cross))
    num = ad.mul(dy, ad.add(ad.mul(slope, ad.square(xi)), ad.mul(d0, cross)))
    y_in = ad.add(y0, ad.div(num, den))

    deriv_num = ad.mul(
        ad.square(slope),
        ad.add(
            ad.mul(d1, ad.square(xi)),
            ad.add(ad.mul(ad.mul(2.0, slope), cross), ad.mul(d0, ad.square(xi_c))),
        ),
    )
    log_deriv_in = ad.log(ad.div(deriv_num, ad.square(den)))

    y = ad.where(inside, y_in, u)
    log_deriv = ad.where(inside, log_deriv_in, ad.const(np.zeros(m)))
    return y, log_deriv


def _rqs_invert(z: np.ndarray, raw: np.ndarray, knots: int, bound: float) -> np.ndarray:
    """Exact inverse of `_rqs_apply` on plain arrays."""
    k = knots
    span = 2.0 * bound
    scale = 1.0 - k * MIN_BIN_FRACTION

    def soft(v):
        e = np.exp(v - v.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    widths = MIN_BIN_FRACTION + scale * soft(raw[:, :k])
    heights = MIN_BIN_FRACTION + scale * soft(raw[:, k : 2 * k])
    m = z.shape[0]

    def knot_positions(fractions):
        interior = -bound + span * np.cumsum(fractions, axis=1)
        return np.concatenate(
            [np.full((m, 1), -bound), interior[:, : k - 1], np.full((m, 1), bound)],
            axis=1,
        )

    kx = knot_positions(widths)
    ky = knot_positions(heights)
    derivs = np.concatenate(
        [
            np.ones((m, 1)),
            np.logaddexp(0.0, raw[:, 2 * k :] + _DERIV_SHIFT),
            np.ones((m, 1)),
        ],
        axis=1,
    )

    inside = np.abs(z) <= bound
    zc = np.clip(z, -bound, bound)
    idx = np.clip(np.sum(ky[:, 1:k] <= zc[:, None], axis=1), 0, k - 1)
    rows = np.arange(m)
    x0, x1 = kx[rows, idx], kx[rows, idx + 1]
    y0, y1 = ky[rows, idx], ky[rows, idx + 1]
    d0, d1 = derivs[rows, idx], derivs[rows, idx + 1]

    dy = y1 - y0
    slope = dy / (x1 - x0)
    yr = zc - y0
    term = d1 + d0 - 2.0 * slope
    a = dy * (slope - d0) + yr * term
    b = dy * d0 - yr * term
    c = -slope * yr
    disc = np.maximum(b * b - 4.0 * a * c, 0.0)
    denom = -b - np.sqrt(disc)
    xi = np.where(np.abs(denom) > 0, 2.0 * c / np.where(denom == 0, 1.0, denom), 0.0)
    xi = np.clip(xi, 0.0, 1.0)
    # The closed-form root cancels badly near segment ends; two Newton
    # steps on the monotone forward rational restore full precision.
    for _ in range(2):
        cross = xi * (1.0 - xi)
        den = slope + term * cross
        value = y0 + dy * (slope * xi * xi + d0 * cross) / den
        grad = (
            slope
            * slope
            * (d1 * xi * xi + 2.0 * slope * cross + d0 * (1.0 - xi) ** 2)
            / (den * den)
        )
        xi = np.clip(xi - (value - zc) / np.maximum(grad, 1e-300), 0.0, 1.0)
    x = x0 + xi * (x1 - x0)
    return np.where(inside, x, z)


def _affine_apply(u, raw):
    """Bounded affine map y = u * exp(a) + b with a = clamp * tanh(raw_a)."""
    log_a = ad.mul(_LOG_SCALE_CLAMP, ad.tanh(ad.take_cols(raw, np.array([0]))))
    shift = ad.take_cols(raw, np.array([1]))
    m = u.value.shape[0]
    log_a = ad.reshape(log_a, (m,))
    shift = ad.reshape(shift, (m,))
    y = ad.add(ad.mul(u, ad.exp(log_a)), shift)
    return y, log_a


def _affine_invert(z: np.ndarray, raw: np.ndarray) -> np.ndarray:
    log_a = _LOG_SCALE_CLAMP * np.tanh(raw[:, 0])
    return (z - raw[:, 1]) * np.exp(-log_a)


class _CouplingLayer:
    """Transforms dims `trans_idx` conditioned on dims `pass_idx`."""

    def __init__(self, dims, layer_index, transform, knots, bound, hidden, gen):
        d = np.arange(dims)
        self.pass_idx = d[(d + layer_index) % 2 == 0]
        self.trans_idx = d[(d + layer_index) % 2 == 1]
        self.transform = transform
        self.knots = knots
        self.bound = bound
        # Column order after concat([pass, transformed]) back to original.
        order = np.concatenate([self.pass_idx, self.trans_idx])
        self.unpermute = np.argsort(order)

        p_out = len(self.trans_idx) * _params_per_dim(transform, knots)
        sizes = [len(self.pass_idx)] + list(hidden) + [p_out]
        self.weights = []
        self.biases = []
        for i in range(len(sizes) - 1):
            fan_in = sizes[i]
            if i == len(sizes) - 2:
                w = np.zeros((fan_in, sizes[i + 1]))
            else:
                w = gen.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, sizes[i + 1]))
            self.weights.append(ad.parameter(w))
            self.biases.append(ad.parameter(np.zeros(sizes[i + 1])))

    def parameters(self):
        return [v for pair in zip(self.weights, self.biases) for v in pair]

    def _conditioner(self, x_pass):
        h = x_pass
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.tanh(h)
        return h

    def forward(self, x):
        """Data-to-latent direction on a Var; returns (z, logdet)."""
        n = x.value.shape[0]
        t = len(self.trans_idx)
        x_pass = ad.take_cols(x, self.pass_idx)
        x_trans = ad.take_cols(x, self.trans_idx)
        raw = self._conditioner(x_pass)
        per = _params_per_dim(self.transform, self.knots)
        raw_flat = ad.reshape(raw, (n * t, per))
        u_flat = ad.reshape(x_trans, (n * t,))
        if self.transform == "rqs":
            y_flat, logd_flat = _rqs_apply(u_flat, raw_flat, self.knots, self.bound)
        else:
            y_flat, logd_flat = _affine_apply(u_flat, raw_flat)
        y = ad.reshape(y_flat, (n, t))
        logdet = ad.sum_axis(ad.reshape(logd_flat, (n, t)), axis=1)
        z = ad.take_cols(ad.concat([x_pass, y], axis=1), self.unpermute)
        return z, logdet

    def inverse_values(self, z: np.ndarray) -> np.ndarray:
        """Latent-to-data direction on plain arrays."""
        n = z.shape[0]
        t = len(self.trans_idx)
        z_pass = z[:, self.pass_idx]
        z_trans = z[:, self.trans_idx]
        with ad.no_grad():
            raw = self._conditioner(ad.const(z_pass)).value
        per = _params_per_dim(self.transform, self.knots)
        raw_flat = raw.reshape(n * t, per)
        z_flat = z_trans.reshape(n * t)
        if self.transform == "rqs":
            x_flat = _rqs_invert(z_flat, raw_flat, self.knots, self.bound)
        else:
            x_flat = _affine_invert(z_flat, raw_flat)
        out = np.concatenate([z_pass, x_flat.reshape(n, t)], axis=1)
        return out[:, self.unpermute]


class _ElementwiseLayer:
    """Single unconditioned monotone transform for one-dimensional data."""

    def __init__(self, transform, knots, bound):
        self.transform = transform
        self.knots = knots
        self.bound = bound
        self.raw = ad.parameter(np.zeros((1, _params_per_dim(transform, knots))))

    def parameters(self):
        return [self.raw]

    def _raw_rows(self, n):
        return ad.add(self.raw, ad.const(np.zeros((n, 1))))

    def forward(self, x):
        n = x.value.shape[0]
        u = ad.reshape(x, (n,))
        raw = self._raw_rows(n)
        if self.transform == "rqs":
            y, logd = _rqs_apply(u, raw, self.knots, self.bound)
        else:
            y, logd = _affine_apply(u, raw)
        return ad.reshape(y, (n, 1)), logd

    def inverse_values(self, z: np.ndarray) -> np.ndarray:
        n = z.shape[0]
        raw = np.broadcast_to(self.raw.value, (n, self.raw.value.shape[1]))
        if self.transform == "rqs":
            x = _rqs_invert(z[:, 0], raw, self.knots, self.bound)
        else:
            x = _affine_invert(z[:, 0], raw)
        return x.reshape(n, 1)


class FlowDensity:
    """Trained flow exposing log-density and the latent transform.

    Immutable after fitting; evaluation only reads parameters, so
    concurrent use from many workers is safe.
    """

    kind = "flow"

    def __init__(self, mean, std, layers, config: TrainConfig):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.layers = layers
        self.config = config
        self.trained_on = 0
        self.final_nll: Optional[float] = None

    @property
    def dims(self) -> int:
        return self.mean.shape[0]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def _forward_var(self, x_std):
        z = x_std
        n = x_std.value.shape[0]
        logdet = ad.const(np.zeros(n))
        for layer in self.layers:
            z, ld = layer.forward(z)
            logdet = ad.add(logdet, ld)
        return z, logdet

    def transform(self, points) -> tuple:
        """Map data-coordinate points to latent z with the layer logdet.

        The returned logdet covers the coupling layers only; the
        constant standardizer correction enters in `log_density`.
        """
        x = np.atleast_2d(_values(points))
        x_std = (x - self.mean) / self.std
        with ad.no_grad():
            z, logdet = self._forward_var(ad.const(x_std))
        return z.value, logdet.value

    def untransform(self, z) -> np.ndarray:
        """Map latent points back to data coordinates."""
        out = np.atleast_2d(np.asarray(z, dtype=np.float64))
        for layer in reversed(self.layers):
            out = layer.inverse_values(out)
        return out * self.std + self.mean

    def log_density(self, points) -> np.ndarray:
        x = np.atleast_2d(_values(points))
        if x.shape[1] != self.dims:
            raise InvalidSpec(
                f"query has {x.shape[1]} dims, model was fit on {self.dims}"
            )
        out = np.empty(x.shape[0])
        offset = float(self.dims * _HALF_LOG_2PI + np.log(self.std).sum())
        for start in range(0, x.shape[0], EVAL_CHUNK):
            chunk = x[start : start + EVAL_CHUNK]
            z, logdet = self.transform(chunk)
            out[start : start + EVAL_CHUNK] = (
                -0.5 * np.sum(z * z, axis=1) + logdet - offset
            )
        return out


def flow_inverse_and_logdet(model: FlowDensity, points) -> tuple:
    """Latent image and coupling-layer logdet for data-coordinate points."""
    return model.transform(points)


def _values(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.values
    return np.asarray(data, dtype=np.float64)


class _Adam:
    def __init__(self, params, lr, lr_decay, steps):
        self.params = params
        self.lr = lr
        self.lr_decay = lr_decay
        self.steps = steps
        self.t = 0
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        if self.steps > 1:
            frac = (self.t - 1) / (self.steps - 1)
        else:
            frac = 0.0
        lr_t = self.lr * self.lr_decay**frac
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.value -= lr_t * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)
            p.grad = None


def build_flow(dims: int, config: TrainConfig) -> FlowDensity:
    """Identity-initialized flow with unit standardizer; used by fitting
    and by tests that need direct access to parameters."""
    config.validate()
    gen = rng.stream(config.seed, "init")
    if dims == 1:
        layers = [_ElementwiseLayer(config.transform, config.knots, config.bound)]
    else:
        layers = [
            _CouplingLayer(
                dims, i, config.transform, config.knots, config.bound, config.hidden, gen
            )
            for i in range(config.layers)
        ]
    return FlowDensity(np.zeros(dims), np.ones(dims), layers, config)


def mean_nll(model: FlowDensity, data) -> float:
    """Mean negative log likelihood in data coordinates."""
    values = np.atleast_2d(_values(data))
    return float(-np.mean(model.log_density(values)))


def fit_flow(working, config: TrainConfig = TrainConfig()) -> tuple:
    """Train a flow on the working data.

    Returns (model, nll_history) where the history holds one mean batch
    NLL per step, in data coordinates. Batches are drawn with
    replacement by a counter-based generator, so training is a pure
    function of (working data, config). Batches larger than the working
    set are clamped to full-set passes.
    """
    config.validate()
    values = np.atleast_2d(_values(working))
    m, dims = values.shape
    if m < 2:
        raise InvalidSpec("flow fitting needs at least 2 rows")

    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    x_std = (values - mean) / std

    model = build_flow(dims, config)
    model.mean = mean
    model.std = std
    model.trained_on = m

    batch = min(config.batch, m)
    log_std_sum = float(np.log(std).sum())
    offset = dims * _HALF_LOG_2PI + log_std_sum

    opt = _Adam(model.parameters(), config.lr, config.lr_decay, config.steps)
    history = []
    for step in range(config.steps):
        key = rng.derive_key(config.seed, "batch", step)
        draws = rng.counter_uniforms(key, 0, batch)
        idx = np.minimum((draws * m).astype(np.int64), m - 1)
        xb = ad.const(x_std[idx])
        z, logdet = model._forward_var(xb)
        half_sq = ad.mul(0.5, ad.sum_axis(ad.square(z), axis=1))
        loss = ad.mean_all(ad.sub(half_sq, logdet))
        nll = float(loss.value) + offset
        if not math.isfinite(nll):
            raise TrainingDiverged(step)
        history.append(nll)
        ad.backward(loss)
        opt.step()

    model.final_nll = mean_nll(model, values)
    return model, history
