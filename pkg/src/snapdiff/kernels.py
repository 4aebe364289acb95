"""Forward jump kernels.

A jump kernel ``F_t`` is column stochastic: column ``y`` is the distribution of
the destination of a jump that leaves ``y`` at time ``t``.  Kernels expose
column access, vectorised sampling from two uniforms per jump, and
(for small vocabularies) the dense matrix.

Semantic kernels weight destinations by embedding proximity::

    F_t(x, y) ∝ exp(-dist(e_x, e_y) / (tau(t) * sqrt(rho_x rho_y))),  x != y

with ``dist`` the squared Euclidean distance ("gauss") or ``1 - cos``
("cosine") and a zero diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .embeddings import EmbeddingTable, NeighborGraph, bandwidths, pairwise_distance
from .rng import as_streams

__all__ = [
    "Vocab",
    "Temperature",
    "Mixture",
    "JumpKernel",
    "UniformKernel",
    "AbsorbKernel",
    "SikKnnKernel",
    "SikDenseKernel",
    "DenseKernel",
    "InterpolatedKernel",
    "kernel_column",
    "sample_jump",
    "random_dense_kernel",
]

DENSE_LIMIT = 512


@dataclass(frozen=True)
class Vocab:
    size: int
    mask_id: int | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("vocabulary must be non-empty")
        if self.mask_id is not None and not 0 <= self.mask_id < self.size:
            raise ValueError("mask id out of range")


@dataclass(frozen=True)
class Temperature:
    """``tau(t) = tau0 * exp(rate * t)``."""

    tau0: float = 1.0
    rate: float = 4.0

    def __call__(self, t):
        return self.tau0 * np.exp(self.rate * np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class Mixture:
    """Weight of the uniform branch, ``lambda(t) = clip(coef * t**power, 0, 1)``."""

    coef: float = 1.0
    power: float = 2.0

    def __call__(self, t):
        return np.clip(self.coef * np.asarray(t, dtype=np.float64) ** self.power, 0.0, 1.0)


def _check_tokens(y, m):
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= m):
        raise IndexError(f"token out of range [0, {m})")
    return y


def _guard_dense(m):
    if m > DENSE_LIMIT:
        raise MemoryError(f"refusing to materialise a {m}x{m} kernel")


def _pick(cum, u):
    """Index of the first cumulative weight exceeding ``u * total`` (row-wise)."""
    target = u[:, None] * cum[:, -1:]
    idx = (cum <= target).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


class JumpKernel:
    m: int
    time_homogeneous = False

    def column(self, t, y) -> np.ndarray:
        raise NotImplementedError

    def sample(self, t, z, u1, u2) -> np.ndarray:
        """Vectorised jump: one destination per ``(t[i], z[i])`` from uniforms ``u1, u2``."""
        raise NotImplementedError

    def matrix(self, t) -> np.ndarray:
        _guard_dense(self.m)
        return np.stack([self.column(t, y) for y in range(self.m)], axis=1)

    def matrices(self, ts) -> np.ndarray:
        """Stack of ``F_t`` for every ``t`` in ``ts``, shape ``(len(ts), m, m)``."""
        return np.stack([self.matrix(float(t)) for t in np.atleast_1d(ts)])

    def apply(self, t, v) -> np.ndarray:
        """``F_t @ v`` for a vector or an ``m x r`` block."""
        return self.matrix(t) @ v

    def apply_transpose(self, t, v) -> np.ndarray:
        return self.matrix(t).T @ v

    def stationary(self, t, iters: int = 100, tol: float = 1e-10) -> np.ndarray:
        """Power-iteration estimate of the fixed point of ``F_t``."""
        v = np.full(self.m, 1.0 / self.m)
        for _ in range(iters):
            w = self.apply(t, v)
            w = w / w.sum()
            if np.abs(w - v).sum() < tol:
                return w
            v = w
        return v

    def to_dict(self) -> dict:
        raise NotImplementedError


class UniformKernel(JumpKernel):
    """Every column is uniform over the whole vocabulary, self included."""

    time_homogeneous = True

    def __init__(self, m: int):
        self.m = int(m)

    def column(self, t, y):
        _check_tokens(y, self.m)
        return np.full(self.m, 1.0 / self.m)

    def sample(self, t, z, u1, u2):
        return np.minimum((u2 * self.m).astype(np.int64), self.m - 1)

    def matrix(self, t):
        _guard_dense(self.m)
        return np.full((self.m, self.m), 1.0 / self.m)

    def apply(self, t, v):
        v = np.asarray(v, dtype=np.float64)
        return np.broadcast_to(v.sum(axis=0) / self.m, v.shape).copy()

    def apply_transpose(self, t, v):
        return self.apply(t, v)

    def to_dict(self):
        return {"kind": "uniform", "m": self.m}


class AbsorbKernel(JumpKernel):
    """Every jump lands on the mask token."""

    time_homogeneous = True

    def __init__(self, m: int, mask_id: int | None = None):
        self.m = int(m)
        self.mask_id = self.m - 1 if mask_id is None else int(mask_id)
        Vocab(self.m, self.mask_id)

    def column(self, t, y):
        _check_tokens(y, self.m)
        col = np.zeros(self.m)
        col[self.mask_id] = 1.0
        return col

    def sample(self, t, z, u1, u2):
        return np.full(np.shape(z), self.mask_id, dtype=np.int64)

    def matrix(self, t):
        _guard_dense(self.m)
        out = np.zeros((self.m, self.m))
        out[self.mask_id] = 1.0
        return out

    def apply(self, t, v):
        v = np.asarray(v, dtype=np.float64)
        out = np.zeros_like(v)
        out[self.mask_id] = v.sum(axis=0)
        return out

    def apply_transpose(self, t, v):
        v = np.asarray(v, dtype=np.float64)
        return np.broadcast_to(v[self.mask_id], v.shape).copy()

    def to_dict(self):
        return {"kind": "absorb", "m": self.m, "mask_id": self.mask_id}


class DenseKernel(JumpKernel):
    """Explicit column-stochastic matrix, optionally a function of time."""

    def __init__(self, matrix):
        self._fn = matrix if callable(matrix) else None
        self._mat = None if callable(matrix) else np.asarray(matrix, dtype=np.float64)
        self.time_homogeneous = self._fn is None
        probe = self.matrix(0.0)
        if probe.ndim != 2 or probe.shape[0] != probe.shape[1]:
            raise ValueError("jump kernel must be square")
        if np.any(probe < 0) or np.abs(probe.sum(axis=0) - 1).max() > 1e-9:
            raise ValueError("jump kernel must be column stochastic")
        self.m = probe.shape[0]

    def matrix(self, t):
        return self._mat if self._fn is None else np.asarray(self._fn(float(t)), dtype=np.float64)

    def column(self, t, y):
        _check_tokens(y, self.m)
        return self.matrix(t)[:, y].copy()

    def sample(self, t, z, u1, u2):
        z = np.asarray(z)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), z.shape)
        out = np.empty(z.shape, dtype=np.int64)
        if self._fn is None:
            out[:] = _pick(np.cumsum(self._mat.T[z], axis=1), u2)
            return out
        for tv in np.unique(t):
            sel = t == tv
            out[sel] = _pick(np.cumsum(self.matrix(tv).T[z[sel]], axis=1), u2[sel])
        return out

    def to_dict(self):
        if self._fn is not None:
            raise TypeError("time-dependent dense kernels are not serialisable")
        return {"kind": "dense", "matrix": self._mat.tolist()}


class InterpolatedKernel(JumpKernel):
    """``F_t = (1 - t) A + t B`` for column-stochastic ``A`` and ``B``."""

    def __init__(self, start, stop):
        self.start = DenseKernel(start).matrix(0.0)
        self.stop = DenseKernel(stop).matrix(0.0)
        if self.start.shape != self.stop.shape:
            raise ValueError("endpoint kernels differ in size")
        self.m = self.start.shape[0]
        self._cs = np.cumsum(self.start.T, axis=1)
        self._ce = np.cumsum(self.stop.T, axis=1)

    def matrix(self, t):
        return (1.0 - t) * self.start + t * self.stop

    def matrices(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))[:, None, None]
        return (1.0 - ts) * self.start + ts * self.stop

    def column(self, t, y):
        _check_tokens(y, self.m)
        return self.matrix(t)[:, y]

    def sample(self, t, z, u1, u2):
        z = np.asarray(z)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), z.shape)[:, None]
        return _pick((1.0 - t) * self._cs[z] + t * self._ce[z], u2)

    def to_dict(self):
        return {"kind": "interpolated", "start": self.start.tolist(), "stop": self.stop.tolist()}


def random_dense_kernel(m: int, seed: int = 0, zero_diagonal: bool = False,
                        time_dependent: bool = False) -> DenseKernel:
    """Random column-stochastic kernel for tests; optionally drifting in time."""
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(m), size=m).T
    b = rng.dirichlet(np.ones(m), size=m).T
    if zero_diagonal:
        for M in (a, b):
            np.fill_diagonal(M, 0.0)
            M /= M.sum(axis=0, keepdims=True)
    if not time_dependent:
        return DenseKernel(a)
    return InterpolatedKernel(a, b)


class _SikBase(JumpKernel):
    def __init__(self, emb, metric, temperature, rho):
        if metric not in ("gauss", "cosine"):
            raise ValueError(f"unknown metric {metric!r}")
        if emb is None:
            raise ValueError("semantic kernels need an embedding table")
        self.emb = emb
        self.m = emb.m
        self.metric = metric
        self.temperature = temperature
        self.rho = np.asarray(rho, dtype=np.float64)
        self.sqrt_rho = np.sqrt(self.rho)

    def _scaled(self, rows, cols):
        d = pairwise_distance(self.emb, rows, cols, self.metric)
        return d / (self.sqrt_rho[np.asarray(rows)][:, None] * self.sqrt_rho[np.asarray(cols)][None, :])


class SikKnnKernel(_SikBase):
    """Sparse semantic kernel on a k-NN graph mixed with a uniform off-diagonal branch.

    Column ``y`` is ``(1 - lam(t)) softmax_{x in N(y)}(-s(x, y) / tau(t))
    + lam(t) 1[x != y] / (m - 1)``.
    """

    def __init__(self, emb: EmbeddingTable, graph: NeighborGraph, temperature=Temperature(),
                 mixture=Mixture()):
        if graph is None:
            raise ValueError("the k-NN kernel needs a neighbour graph")
        super().__init__(emb, graph.metric, temperature, graph.rho)
        self.graph = graph
        self.mixture = mixture
        # neighbour distances rescaled by the bandwidths, fixed in time
        self.scaled = graph.dists / (self.sqrt_rho[:, None] * self.sqrt_rho[graph.ids])
        self._shift = self.scaled.min(axis=1, keepdims=True)

    def _softmax_rows(self, t, y):
        tau = np.asarray(self.temperature(t), dtype=np.float64)
        logits = -(self.scaled[y] - self._shift[y]) / np.reshape(tau, (-1, 1) if tau.ndim else ())
        w = np.exp(logits)
        return w / w.sum(axis=-1, keepdims=True)

    def column(self, t, y):
        _check_tokens(y, self.m)
        lam = float(self.mixture(t))
        col = np.full(self.m, lam / (self.m - 1))
        col[y] = 0.0
        col[self.graph.ids[y]] += (1.0 - lam) * self._softmax_rows(t, y)
        return col

    def sample(self, t, z, u1, u2):
        z = np.asarray(z, dtype=np.int64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), z.shape)
        lam = self.mixture(t)
        out = np.empty(z.shape, dtype=np.int64)
        uni = u1 < lam
        if np.any(uni):
            j = np.minimum((u2[uni] * (self.m - 1)).astype(np.int64), self.m - 2)
            out[uni] = j + (j >= z[uni])
        nb = ~uni
        if np.any(nb):
            zs = z[nb]
            tau = self.temperature(t[nb])
            w = np.exp(-(self.scaled[zs] - self._shift[zs]) / tau[:, None])
            pick = _pick(np.cumsum(w, axis=1), u2[nb])
            out[nb] = self.graph.ids[zs, pick]
        return out

    def _sparse(self, t):
        k = self.graph.k
        w = (1.0 - float(self.mixture(t))) * self._softmax_rows(np.full(self.m, t), np.arange(self.m))
        cols = np.repeat(np.arange(self.m), k)
        return sparse.csc_matrix((w.ravel(), (self.graph.ids.ravel(), cols)), shape=(self.m, self.m))

    def matrix(self, t):
        return self.matrices([t])[0]

    def matrices(self, ts):
        _guard_dense(self.m)
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        m, k = self.m, self.graph.k
        tau = self.temperature(ts)[:, None, None]
        w = np.exp(-(self.scaled - self._shift)[None] / tau)
        w /= w.sum(axis=2, keepdims=True)
        lam = self.mixture(ts)
        out = np.broadcast_to((lam[:, None, None] / (m - 1)) * (1.0 - np.eye(m)), (len(ts), m, m)).copy()
        out[:, self.graph.ids.ravel(), np.repeat(np.arange(m), k)] += \
            ((1.0 - lam)[:, None, None] * w).reshape(len(ts), -1)
        return out

    def apply(self, t, v):
        v = np.asarray(v, dtype=np.float64)
        lam = float(self.mixture(t))
        return self._sparse(t) @ v + lam * (v.sum(axis=0) - v) / (self.m - 1)

    def apply_transpose(self, t, v):
        v = np.asarray(v, dtype=np.float64)
        lam = float(self.mixture(t))
        return self._sparse(t).T @ v + lam * (v.sum(axis=0) - v) / (self.m - 1)

    def to_dict(self):
        return {"kind": "sik_knn", "metric": self.metric, "k": self.graph.k,
                "temperature": vars(self.temperature), "mixture": vars(self.mixture)}


class SikDenseKernel(_SikBase):
    """Dense semantic kernel evaluated lazily in blocks of ``block_size`` tokens.

    Sampling is exact: a first pass accumulates per-block log masses, a second
    pass recomputes only the block that holds the drawn quantile.
    """

    def __init__(self, emb: EmbeddingTable, metric: str = "gauss", temperature=Temperature(),
                 rho=None, bandwidth_k: int = 8, block_size: int = 4096):
        if emb is None:
            raise ValueError("semantic kernels need an embedding table")
        if rho is None:
            rho = bandwidths(emb, min(bandwidth_k, emb.m - 1), metric)
        super().__init__(emb, metric, temperature, rho)
        self.block_size = int(block_size)
        self.bandwidth_k = bandwidth_k

    def _block_logits(self, t, y, start, stop):
        """Log affinities of destinations ``start:stop`` for source tokens ``y``."""
        cols = np.arange(start, stop)
        tau = np.asarray(self.temperature(t), dtype=np.float64).reshape(-1, 1)
        logit = -self._scaled(y, cols) / tau
        logit[cols[None, :] == np.asarray(y)[:, None]] = -np.inf
        return logit

    def _block_lse(self, t, y):
        y = np.atleast_1d(y)
        starts = range(0, self.m, self.block_size)
        out = np.empty((len(y), len(starts)))
        for b, start in enumerate(starts):
            lg = self._block_logits(t, y, start, min(start + self.block_size, self.m))
            mx = lg.max(axis=1, keepdims=True)
            safe = np.where(np.isfinite(mx), mx, 0.0)
            with np.errstate(divide="ignore"):
                out[:, b] = (safe[:, 0] + np.log(np.exp(lg - safe).sum(axis=1)))
        return out

    def column(self, t, y):
        _check_tokens(y, self.m)
        lse = self._block_lse(t, y)[0]
        total = np.logaddexp.reduce(lse)
        return np.exp(self._block_logits(t, [y], 0, self.m)[0] - total)

    def sample(self, t, z, u1, u2, chunk: int = 256):
        z = np.asarray(z, dtype=np.int64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), z.shape)
        out = np.empty(z.shape, dtype=np.int64)
        for c in range(0, len(z), chunk):
            sl = slice(c, c + chunk)
            out[sl] = self._sample_chunk(t[sl], z[sl], u2[sl])
        return out

    def _sample_chunk(self, t, z, u):
        lse = self._block_lse(t, z)
        total = np.logaddexp.reduce(lse, axis=1, keepdims=True)
        cum = np.cumsum(np.exp(lse - total), axis=1)
        blk = np.minimum((cum <= u[:, None] * cum[:, -1:]).sum(axis=1), cum.shape[1] - 1)
        before = np.where(blk > 0, cum[np.arange(len(z)), blk - 1], 0.0)
        out = np.empty(len(z), dtype=np.int64)
        for b in np.unique(blk):
            sel = np.flatnonzero(blk == b)
            start = b * self.block_size
            stop = min(start + self.block_size, self.m)
            lg = self._block_logits(t[sel], z[sel], start, stop)
            w = np.cumsum(np.exp(lg - total[sel]), axis=1)
            resid = (u[sel] * cum[sel, -1] - before[sel])[:, None]
            j = np.minimum((w <= resid).sum(axis=1), stop - start - 1)
            # rounding can land on the excluded self entry; step to the nearest valid one
            j = np.where(start + j == z[sel], np.where(j > 0, j - 1, j + 1), j)
            out[sel] = start + j
        return out

    def matrix(self, t):
        return self.matrices([t])[0]

    def matrices(self, ts):
        _guard_dense(self.m)
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        ys = np.arange(self.m)
        S = self._scaled(ys, ys)
        np.fill_diagonal(S, np.inf)
        lg = -S[None] / self.temperature(ts)[:, None, None]
        lg -= lg.max(axis=2, keepdims=True)
        w = np.exp(lg)
        return np.transpose(w / w.sum(axis=2, keepdims=True), (0, 2, 1))

    def apply(self, t, v):
        if self.m <= DENSE_LIMIT:
            return self.matrix(t) @ v
        v = np.asarray(v, dtype=np.float64)
        ys = np.arange(self.m)
        norm = np.logaddexp.reduce(self._block_lse(np.full(self.m, t), ys), axis=1)
        out = np.zeros_like(v)
        for start in range(0, self.m, self.block_size):
            stop = min(start + self.block_size, self.m)
            w = np.exp(self._block_logits(np.full(self.m, t), ys, start, stop) - norm[:, None])
            out[start:stop] += w.T @ v
        return out

    def to_dict(self):
        return {"kind": "sik_dense", "metric": self.metric, "bandwidth_k": self.bandwidth_k,
                "temperature": vars(self.temperature), "block_size": self.block_size}


def kernel_column(kern: JumpKernel, t, y) -> np.ndarray:
    return kern.column(t, y)


def sample_jump(kern: JumpKernel, t, z, rng) -> int:
    """Single jump ``z' ~ F_t(., z)``; ``rng`` is a seed, Generator or stream."""
    _check_tokens(z, kern.m)
    streams = as_streams(rng, 1)
    idx = np.zeros(1, dtype=np.int64)
    u1, u2 = streams.at(idx, idx), streams.at(idx, idx + 1)
    return int(kern.sample(np.array([t], dtype=np.float64), np.array([z]), u1, u2)[0])
