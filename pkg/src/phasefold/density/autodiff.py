"""Minimal reverse-mode automatic differentiation on numpy arrays.

A `Var` wraps an ndarray and remembers how it was produced; `backward`
walks the recorded graph once and accumulates gradients into the leaf
variables. Only nodes downstream of a tracked leaf (a parameter) build
graph structure, so passing plain data through the ops is cheap, and
`no_grad()` disables recording entirely for bulk evaluation.

The op set is deliberately small: exactly what a coupling-layer flow
with spline or affine transforms needs.
"""

import threading
from contextlib import contextmanager

import numpy as np

# Recording state is per thread: bulk evaluation may run inside worker
# threads while the owning thread keeps recording, so a shared flag
# would race on enter/exit and could leave recording disabled globally.
_STATE = threading.local()


def _grad_on() -> bool:
    return getattr(_STATE, "grad_on", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block for this thread."""
    prev = _grad_on()
    _STATE.grad_on = False
    try:
        yield
    finally:
        _STATE.grad_on = prev


class Var:
    """Array node in the computation graph."""

    __slots__ = ("value", "grad", "track", "_parents", "_vjp")

    def __init__(self, value, track=False, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.track = track
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, track={self.track})"


def parameter(value) -> Var:
    """Tracked leaf; `backward` deposits a gradient here."""
    return Var(np.array(value, dtype=np.float64), track=True)


def const(value) -> Var:
    """Untracked leaf; no gradient flows into it."""
    return value if isinstance(value, Var) else Var(value)


def _make(value, parents, vjp) -> Var:
    if _grad_on() and any(p.track for p in parents):
        return Var(value, track=True, parents=parents, vjp=vjp)
    return Var(value)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Var) -> None:
    """Accumulate d(root)/d(leaf) into every tracked leaf's `.grad`."""
    if not root.track:
        raise ValueError("backward target does not depend on any parameter")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.track and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for p, g in zip(node._parents, node._vjp(node.grad)):
            if not p.track or g is None:
                continue
            p.grad = g if p.grad is None else p.grad + g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = const(a), const(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b):
    a, b = const(a), const(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b):
    a, b = const(a), const(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b):
    a, b = const(a), const(b)
    inv = 1.0 / b.value
    return _make(
        a.value * inv,
        (a, b),
        lambda g: (
            _unbroadcast(g * inv, a.value.shape),
            _unbroadcast(-g * a.value * inv * inv, b.value.shape),
        ),
    )


def neg(a):
    a = const(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = const(a), const(b)
    return _make(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


# -------------------------------------------------------------- elementwise


def tanh(a):
    a = const(a)
    y = np.tanh(a.value)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a):
    a = const(a)
    y = np.exp(a.value)
    return _make(y, (a,), lambda g: (g * y,))


def log(a):
    a = const(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def softplus(a):
    a = const(a)
    y = np.logaddexp(0.0, a.value)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(y, (a,), lambda g: (g * sig,))


def square(a):
    a = const(a)
    return _make(a.value * a.value, (a,), lambda g: (g * 2.0 * a.value,))


def clip(a, lo: float, hi: float):
    """Pass-through gradient strictly inside (lo, hi), zero outside."""
    a = const(a)
    inside = (a.value > lo) & (a.value < hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def where(mask: np.ndarray, a, b):
    """Elementwise select with a constant boolean mask."""
    a, b = const(a), const(b)
    return _make(
        np.where(mask, a.value, b.value),
        (a, b),
        lambda g: (
            _unbroadcast(g * mask, a.value.shape),
            _unbroadcast(g * ~mask, b.value.shape),
        ),
    )


# --------------------------------------------------------------- reductions


def sum_axis(a, axis: int, keepdims: bool = False):
    a = const(a)
    val = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape),)

    return _make(val, (a,), vjp)


def mean_all(a):
    a = const(a)
    size = a.value.size
    return _make(
        a.value.mean(),
        (a,),
        lambda g: (np.full(a.value.shape, g / size),),
    )


def cumsum(a, axis: int):
    a = const(a)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.value, axis=axis), (a,), vjp)


def softmax(a, axis: int = -1):
    a = const(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (a,), vjp)


# ------------------------------------------------------------ restructuring


def reshape(a, shape):
    a = const(a)
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts, axis: int = 1):
    parts = [const(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def take_cols(a, cols):
    """Select columns of a 2-D array; `cols` is a fixed index array."""
    a = const(a)
    cols = np.asarray(cols, dtype=np.int64)

    def vjp(g):
        z = np.zeros_like(a.value)
        np.add.at(z, (slice(None), cols), g)
        return (z,)

    return _make(a.value[:, cols], (a,), vjp)


def gather_rows(a, idx):
    """Pick one entry per row of a 2-D array; `idx` is a fixed (n,) index array."""
    a = const(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.value.shape[0])

    def vjp(g):
        z = np.zeros_like(a.value)
        np.add.at(z, (rows, idx), g)
        return (z,)

    return _make(a.value[rows, idx], (a,), vjp)
