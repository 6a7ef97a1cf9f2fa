"""Deterministic randomness.

Two kinds of draws are used in the package:

* stream draws (shuffles, subset picks, generators) come from a PCG64
  ``numpy.random.Generator`` keyed by ``(seed, purpose)``;
* per-index draws (selection acceptance tests) come from a stateless
  counter-based construction keyed by ``(seed, purpose, pass)`` and indexed
  by global row position, so a value never depends on evaluation order or
  on how rows were partitioned across workers.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def derive_key(seed: int, *parts: object) -> int:
    """Collapse (seed, tag, tag, ...) into a stable 64-bit key.

    Tags may be ints or strings; hashing goes through SHA-256 so keys are
    stable across platforms and Python processes. Ints are folded to 64
    bits, so derived keys can be fed back in as seeds.
    """
    h = hashlib.sha256()
    h.update(struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF))
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8") + b"\x00")
        else:
            h.update(b"i" + struct.pack("<Q", int(part) & 0xFFFFFFFFFFFFFFFF))
    return int.from_bytes(h.digest()[:8], "little")


def stream(seed: int, *parts: object) -> np.random.Generator:
    """PCG64 generator for a single logical stream of draws."""
    return np.random.default_rng(derive_key(seed, *parts))


def _mix(x: np.ndarray) -> np.ndarray:
    z = (x + _GOLDEN) * _MIX1
    z ^= z >> _U64(30)
    z *= _MIX1
    z ^= z >> _U64(27)
    z *= _MIX2
    z ^= z >> _U64(31)
    return z


def counter_uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) for indices ``start .. start+count``.

    ``counter_uniforms(k, i, 1)`` is the same value regardless of which
    window it is requested through; this is the partition-independence
    contract the parallel runtime relies on.
    """
    idx = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix(idx ^ _mix(np.asarray(_U64(key & 0xFFFFFFFFFFFFFFFF))))
    return (bits >> _U64(11)).astype(np.float64) * 2.0**-53


def counter_uniforms_at(key: int, indices: np.ndarray) -> np.ndarray:
    """Uniforms for an explicit (possibly non-contiguous) index set."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix(idx ^ _mix(np.asarray(_U64(key & 0xFFFFFFFFFFFFFFFF))))
    return (bits >> _U64(11)).astype(np.float64) * 2.0**-53
