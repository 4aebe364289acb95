"""Counter-based random streams.

Every token position owns a stream keyed by ``(seed, sequence, position)``;
draw ``c`` of that stream is ``mix(key + c * GOLDEN)``.  Because a draw
depends only on its key and counter, results do not depend on how positions
are batched or split between workers.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)


def _mix(z):
    # SplitMix64 finaliser
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_keys(seed, sequence, positions) -> np.ndarray:
    """uint64 key per position, a hash of ``(seed, sequence, position)``."""
    with np.errstate(over="ignore"):
        k = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        k = _mix(k ^ (np.asarray(sequence, dtype=np.uint64) + _GOLDEN))
        return _mix(k ^ (np.asarray(positions, dtype=np.uint64) * _GOLDEN + _M1))


def uniforms(keys, counters) -> np.ndarray:
    """Uniform doubles in the open interval (0, 1)."""
    with np.errstate(over="ignore"):
        z = _mix(np.asarray(keys, dtype=np.uint64)
                 + (np.asarray(counters, dtype=np.uint64) + np.uint64(1)) * _GOLDEN)
    return ((z >> _S11).astype(np.float64) + 0.5) * _INV53


class KeyedStreams:
    """One independent stream per position with random access by counter."""

    def __init__(self, seed: int, positions, sequence=0):
        positions = np.asarray(positions)
        self.keys = stream_keys(seed, np.broadcast_to(sequence, positions.shape), positions)

    def __len__(self):
        return len(self.keys)

    def at(self, idx, counters):
        return uniforms(self.keys[idx], counters)

    def subset(self, idx) -> "KeyedStreams":
        out = object.__new__(KeyedStreams)
        out.keys = self.keys[idx]
        return out


class GeneratorStreams:
    """Adapter that serves draws from a ``numpy.random.Generator``.

    Counters are ignored, so output depends on call order; use
    :class:`KeyedStreams` where reproducibility across batching matters.
    """

    def __init__(self, rng: np.random.Generator, n: int):
        self.rng = rng
        self.n = n

    def __len__(self):
        return self.n

    def at(self, idx, counters):
        return self.rng.random(np.shape(idx) if np.ndim(idx) else ())

    def subset(self, idx) -> "GeneratorStreams":
        return GeneratorStreams(self.rng, len(np.atleast_1d(idx)))


def as_streams(rng, n: int, sequence=0):
    """Coerce ``rng`` (int seed, Generator or stream object) into streams for ``n`` positions."""
    if isinstance(rng, (KeyedStreams, GeneratorStreams)):
        if len(rng) != n:
            raise ValueError("stream count does not match the number of positions")
        return rng
    if isinstance(rng, np.random.Generator):
        return GeneratorStreams(rng, n)
    return KeyedStreams(int(rng), np.arange(n), sequence)
