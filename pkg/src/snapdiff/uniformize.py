"""Exact forward noising by uniformization.

Each position draws ``N ~ Poisson(fbar(t))`` jumps at times
``V = fbar^{-1}(U fbar(t))`` (sorted) and walks the chain
``z_k ~ F_{T_k}(., z_{k-1})`` from the clean token.

Random draws of a position come from its own keyed stream, laid out as
counter 0 for ``N``, counters ``1..N`` for the jump times and counters
``1 + N + 2(k - 1)`` and ``1 + N + 2(k - 1) + 1`` for jump ``k``.  Output is
therefore identical for any batching or worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import AbsorbKernel, JumpKernel, UniformKernel
from .rng import GeneratorStreams, KeyedStreams, as_streams
from .schedules import Schedule

__all__ = [
    "JumpPath",
    "PathBatch",
    "poisson_counts",
    "sample_jump_times",
    "noise_token",
    "noise_sequence",
    "noise_batch",
    "full_path",
    "resolve_workers",
]


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Jump record of one position: ``states[0]`` is the clean token."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.states) != len(self.times) + 1:
            raise ValueError("need one more state than jump times")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("jump times must be sorted")

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    @property
    def final(self) -> int:
        return int(self.states[-1])

    def state_at(self, u: float) -> int:
        """State after all jumps with ``T_k <= u``."""
        return int(self.states[np.searchsorted(self.times, u, side="right")])


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Paths of many positions in CSR layout.

    Jumps of position ``i`` occupy ``offsets[i]:offsets[i + 1]`` of ``times``
    (sorted) and ``states`` (the state entered at each jump).
    """

    x0: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    states: np.ndarray

    def __len__(self):
        return len(self.x0)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def final(self) -> np.ndarray:
        last = self.offsets[1:] - 1
        return np.where(self.counts > 0, self.states[np.maximum(last, 0)], self.x0)

    def owners(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.x0)), self.counts)

    def previous_states(self) -> np.ndarray:
        """State each jump leaves, aligned with ``states``."""
        prev = np.empty_like(self.states)
        if len(prev):
            prev[1:] = self.states[:-1]
            first = self.offsets[:-1][self.counts > 0]
            prev[first] = self.x0[self.counts > 0]
        return prev

    def path(self, i: int) -> JumpPath:
        a, b = self.offsets[i], self.offsets[i + 1]
        return JumpPath(self.times[a:b].copy(), np.concatenate([[self.x0[i]], self.states[a:b]]))

    def state_at(self, u) -> np.ndarray:
        """Per-position state at time ``u`` (scalar or one time per position)."""
        u = np.broadcast_to(np.asarray(u, dtype=np.float64), self.x0.shape)
        hit = self.times <= u[self.owners()]
        n_before = np.bincount(self.owners()[hit], minlength=len(self.x0))
        idx = self.offsets[:-1] + n_before - 1
        return np.where(n_before > 0, self.states[np.maximum(idx, 0)], self.x0)

    def to_jsonl(self, fh, positions=None) -> None:
        for i in range(len(self.x0)) if positions is None else positions:
            a, b = self.offsets[i], self.offsets[i + 1]
            jumps = [[float(T), int(z)] for T, z in zip(self.times[a:b], self.states[a:b])]
            fh.write(json.dumps({"pos": int(i), "N": int(b - a), "jumps": jumps}) + "\n")

    @staticmethod
    def concat(parts) -> "PathBatch":
        parts = list(parts)
        sizes = np.array([len(p.times) for p in parts])
        shift = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        offsets = np.concatenate([[0]] + [p.offsets[1:] + s for p, s in zip(parts, shift)])
        return PathBatch(np.concatenate([p.x0 for p in parts]), offsets,
                         np.concatenate([p.times for p in parts]),
                         np.concatenate([p.states for p in parts]))


def resolve_workers(workers: int | None = None) -> int:
    env = os.environ.get("GDDS_WORKERS")
    if env:
        workers = int(env)
    workers = 1 if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be positive")
    return workers


def poisson_counts(lam, u) -> np.ndarray:
    """Inverse-CDF Poisson draws from uniforms ``u``."""
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), np.shape(u))
    u = np.asarray(u, dtype=np.float64)
    n = np.zeros(u.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    live = np.flatnonzero(u > cdf)
    cap = lam + 40.0 * np.sqrt(lam) + 60.0
    k = 0
    while live.size:
        k += 1
        p[live] *= lam[live] / k
        cdf[live] += p[live]
        n[live] = k
        keep = (u[live] > cdf[live]) & (p[live] > 0) & (k < cap[live])
        live = live[keep]
    return n


def _noise_chunk(kern, sched, x0, t, streams, record):
    n = len(x0)
    idx = np.arange(n)
    fbar = np.asarray(sched.integrated_rate(t), dtype=np.float64)
    N = poisson_counts(fbar, streams.at(idx, np.zeros(n, dtype=np.int64)))
    z = x0.astype(np.int64).copy()
    jumped = N > 0
    memoryless = isinstance(kern, (UniformKernel, AbsorbKernel))
    if memoryless and not record:
        # destination ignores the source and the time: only the last jump matters
        j = idx[jumped]
        c = 1 + N[j] + 2 * (N[j] - 1)
        z[j] = kern.sample(np.zeros(len(j)), z[j], streams.at(j, c), streams.at(j, c + 1))
        return z, None
    owner = np.repeat(idx, N)
    offsets = np.concatenate([[0], np.cumsum(N)])
    k_in = np.arange(len(owner)) - offsets[owner]
    if kern.time_homogeneous and not record:
        times = np.zeros(len(owner))
    else:
        u = streams.at(owner, 1 + k_in)
        fb = np.broadcast_to(fbar, x0.shape)[owner]
        times = sched.inverse_integrated_rate(u * fb)
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        order = np.lexsort((times, owner))
        times = times[order]
    states = np.empty(len(owner), dtype=np.int64)
    for k in range(1, int(N.max(initial=0)) + 1):
        act = np.flatnonzero(N >= k)
        pos = offsets[act] + k - 1
        c = 1 + N[act] + 2 * (k - 1)
        z[act] = kern.sample(times[pos], z[act], streams.at(act, c), streams.at(act, c + 1))
        states[pos] = z[act]
    batch = PathBatch(x0.astype(np.int64), offsets, times, states) if record else None
    return z, batch


def noise_batch(kern: JumpKernel, sched: Schedule, x0, t, rng=0, record: bool = True,
                workers: int | None = 1, sequence=None):
    """Noise every entry of ``x0`` (any shape) independently to time ``t``.

    Parameters
    ----------
    t : float or array broadcastable to ``x0``
    rng : int seed, ``numpy.random.Generator`` or a stream object
        Integer seeds key one stream per entry by ``(seed, row, column)`` for
        2-D input and ``(seed, sequence, index)`` otherwise.
    record : bool
        Keep the jump paths (returned as a flat :class:`PathBatch` in C order).
    workers : int
        Thread count over contiguous chunks; output does not depend on it.

    Returns
    -------
    (x_t, PathBatch or None)
    """
    x0 = np.asarray(x0)
    if x0.size and (x0.min() < 0 or x0.max() >= kern.m):
        raise IndexError("clean token out of range")
    shape = x0.shape
    flat = x0.reshape(-1)
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), shape).reshape(-1)
    if np.any(tt < 0) or np.any(tt > 1):
        raise ValueError("noising time outside [0, 1]")
    if isinstance(rng, (int, np.integer)):
        if x0.ndim == 2:
            rows, cols = np.indices(shape)
            streams = KeyedStreams(int(rng), cols.reshape(-1), rows.reshape(-1))
        else:
            streams = KeyedStreams(int(rng), np.arange(flat.size), 0 if sequence is None else sequence)
    else:
        streams = as_streams(rng, flat.size)
    workers = resolve_workers(workers)
    if isinstance(streams, GeneratorStreams) or workers == 1 or flat.size < 2 * workers:
        z, paths = _noise_chunk(kern, sched, flat, tt, streams, record)
        return z.reshape(shape), paths
    bounds = np.linspace(0, flat.size, workers + 1).astype(np.int64)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(workers) as pool:
        out = list(pool.map(lambda s: _noise_chunk(kern, sched, flat[s], tt[s],
                                                   streams.subset(np.arange(s.start, s.stop)),
                                                   record), chunks))
    z = np.concatenate([o[0] for o in out])
    paths = PathBatch.concat([o[1] for o in out]) if record else None
    return z.reshape(shape), paths


def sample_jump_times(sched: Schedule, t: float, rng=0):
    """``(N, sorted jump times)`` of one position on ``[0, t]``."""
    streams = as_streams(rng, 1)
    fbar = sched.integrated_rate(t)
    zero = np.zeros(1, dtype=np.int64)
    N = int(poisson_counts(fbar, streams.at(zero, zero))[0])
    u = streams.at(np.zeros(N, dtype=np.int64), 1 + np.arange(N))
    times = np.sort(np.asarray(sched.inverse_integrated_rate(u * fbar), dtype=np.float64).reshape(-1))
    return N, times


def noise_token(kern: JumpKernel, sched: Schedule, x0: int, t: float, rng=0):
    """Single-token noising; returns ``(x_t, JumpPath)``."""
    z, paths = noise_batch(kern, sched, np.array([x0]), t, rng)
    return int(z[0]), paths.path(0)


def noise_sequence(kern: JumpKernel, sched: Schedule, x0_seq, t: float, rng=0,
                   workers: int | None = 1, sequence: int = 0, record: bool = True):
    """Noise a 1-D token sequence, one keyed stream per position."""
    x0_seq = np.asarray(x0_seq)
    if x0_seq.ndim != 1 or x0_seq.size == 0:
        raise ValueError("need a non-empty 1-D token sequence")
    return noise_batch(kern, sched, x0_seq, t, rng, record, workers, sequence)


def full_path(kern: JumpKernel, sched: Schedule, x0: int, rng=0) -> JumpPath:
    return noise_token(kern, sched, x0, 1.0, rng)[1]
