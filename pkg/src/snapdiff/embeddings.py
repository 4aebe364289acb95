"""Embedding tables and exact k-nearest-neighbour graphs."""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmbeddingTable",
    "NeighborGraph",
    "pairwise_distance",
    "build_neighbor_graph",
    "grid_embeddings",
    "cluster_embeddings",
    "save_embeddings",
    "load_embeddings",
    "load_embeddings_csv",
]

METRICS = ("gauss", "cosine")
_EMB_MAGIC = b"EMB1"
_RHO_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    vectors: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 1 or v.shape[0] < 1:
            raise ValueError("embedding table must be a non-empty m x d array")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding table contains NaN or Inf")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "sq_norms", np.einsum("ij,ij->i", v, v))
        norms = np.sqrt(self.sq_norms)
        unit = v / np.where(norms > 0, norms, 1.0)[:, None]
        object.__setattr__(self, "unit", unit)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def pairwise_distance(emb: EmbeddingTable, rows, cols=None, metric="gauss") -> np.ndarray:
    """Embedding distance between token sets: squared Euclidean or ``1 - cos``."""
    rows = np.asarray(rows)
    cols = np.arange(emb.m) if cols is None else np.asarray(cols)
    if metric == "gauss":
        v = emb.vectors
        out = emb.sq_norms[rows][:, None] + emb.sq_norms[cols][None, :] - 2.0 * (v[rows] @ v[cols].T)
        return np.maximum(out, 0.0)
    if metric == "cosine":
        u = emb.unit
        return np.maximum(1.0 - u[rows] @ u[cols].T, 0.0)
    raise ValueError(f"unknown metric {metric!r}")


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Per-token neighbour lists sorted by increasing distance, self excluded.

    ``rho`` holds the self-tuning bandwidths.
    """

    ids: np.ndarray
    dists: np.ndarray
    rho: np.ndarray
    metric: str = "gauss"

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    @property
    def m(self) -> int:
        return self.ids.shape[0]


def build_neighbor_graph(emb: EmbeddingTable, k: int, metric: str = "gauss",
                         bandwidth_k: int | None = None, block: int = 512) -> NeighborGraph:
    """Exact k-NN by blockwise brute force.

    ``rho[i]`` is the distance (in the chosen metric) from token ``i`` to its
    ``bandwidth_k``-th neighbour, floored at 1e-12.  Ties are broken by token id.
    """
    m = emb.m
    bandwidth_k = k if bandwidth_k is None else bandwidth_k
    if not 1 <= k < m:
        raise ValueError("need 1 <= k < m")
    if not 1 <= bandwidth_k <= k:
        raise ValueError("need 1 <= bandwidth_k <= k")
    ids = np.empty((m, k), dtype=np.int64)
    dists = np.empty((m, k), dtype=np.float64)
    for start in range(0, m, block):
        rows = np.arange(start, min(start + block, m))
        d = pairwise_distance(emb, rows, None, metric)
        d[np.arange(len(rows)), rows] = np.inf
        if k < m - 1:
            part = np.argpartition(d, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(m), (len(rows), m))
        pd = np.take_along_axis(d, part, axis=1)
        order = np.lexsort((part, pd), axis=1)[:, :k]
        bid = np.take_along_axis(part, order, axis=1)
        bd = np.take_along_axis(pd, order, axis=1)
        # rows where the k-th distance is tied with an unselected token
        edge = bd[:, -1:]
        tied = np.flatnonzero((d == edge).sum(axis=1) > (bd == edge).sum(axis=1))
        for r in tied:
            full = np.lexsort((np.arange(m), d[r]))[:k]
            bid[r], bd[r] = full, d[r, full]
        ids[rows] = bid
        dists[rows] = bd
    rho = dists[:, bandwidth_k - 1].copy()
    if np.any(rho < _RHO_FLOOR):
        warnings.warn("duplicate embeddings give zero bandwidths; flooring at 1e-12", RuntimeWarning,
                      stacklevel=2)
        rho = np.maximum(rho, _RHO_FLOOR)
    return NeighborGraph(ids, dists, rho, metric)


def bandwidths(emb: EmbeddingTable, bandwidth_k: int, metric: str = "gauss") -> np.ndarray:
    return build_neighbor_graph(emb, bandwidth_k, metric, bandwidth_k).rho


def grid_embeddings(m: int, spacing: float = 1.0) -> EmbeddingTable:
    """First ``m`` points of a square 2-D lattice, row by row."""
    side = int(np.ceil(np.sqrt(m)))
    i = np.arange(m)
    return EmbeddingTable(spacing * np.stack([i % side, i // side], axis=1).astype(np.float64))


def cluster_embeddings(m: int, d: int, n_clusters: int = 8, spread: float = 0.3,
                       seed: int = 0) -> EmbeddingTable:
    """Gaussian clusters around random unit-variance centres."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_clusters, d))
    labels = rng.integers(0, n_clusters, size=m)
    return EmbeddingTable(centres[labels] + spread * rng.standard_normal((m, d)))


def save_embeddings(path, emb: EmbeddingTable) -> None:
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC + struct.pack("<II", emb.m, emb.d))
        fh.write(emb.vectors.astype("<f4").tobytes())


def load_embeddings(path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != _EMB_MAGIC:
            raise ValueError(f"{path}: not an EMB1 file")
        m, d = struct.unpack("<II", head[4:])
        raw = fh.read()
    if len(raw) != 4 * m * d:
        raise ValueError(f"{path}: expected {m * d} float32 values, found {len(raw) // 4}")
    return EmbeddingTable(np.frombuffer(raw, dtype="<f4").reshape(m, d).astype(np.float64))


def load_embeddings_csv(path) -> EmbeddingTable:
    """CSV with a ``m,d`` header line followed by ``m`` rows of ``d`` values."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        m, d = (int(x) for x in next(reader))
        rows = [[float(x) for x in row] for row in reader if row]
    vec = np.asarray(rows, dtype=np.float64)
    if vec.shape != (m, d):
        raise ValueError(f"{path}: header says {m}x{d}, body is {vec.shape}")
    return EmbeddingTable(vec)
