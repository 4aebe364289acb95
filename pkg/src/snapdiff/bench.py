"""Noising-latency benchmark across kernel variants.

Protocol per kernel and seed: ``warmup`` untimed runs, then ``timed`` runs
of noising one ``batch x seq_len`` token batch at time ``t``.  Per-seed rows
report the mean and standard deviation over timed runs; the per-kernel summary
reports the mean and standard deviation over seed means.

The dense semantic kernel costs O(m) per jump, so it is timed on a reduced
batch of ``dense_tokens`` tokens and its latency is scaled to the full batch.
"""

from __future__ import annotations

import csv
import hashlib
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .embeddings import NeighborGraph, build_neighbor_graph, cluster_embeddings
from .kernels import AbsorbKernel, Mixture, SikDenseKernel, SikKnnKernel, Temperature, UniformKernel
from .schedules import LogLinear
from .uniformize import noise_batch

__all__ = ["BenchConfig", "BenchResult", "KERNELS", "run_bench", "write_csv", "write_svg",
           "cached_graph"]

KERNELS = ("absorb", "uniform", "sik_knn_gauss", "sik_knn_cosine", "sik_dense_gauss",
           "sik_dense_cosine")
MIN_RUN_S = 5e-3


@dataclass
class BenchConfig:
    batch: int = 512
    seq_len: int = 1024
    m: int = 50257
    d: int = 16
    k: int = 64
    kernels: tuple = ("absorb", "uniform", "sik_knn_gauss", "sik_dense_gauss")
    seeds: int = 5
    timed: int = 10
    warmup: int = 3
    t: float = 0.5
    dense_tokens: int = 2048
    workers: int = 1
    embedding_seed: int = 0
    cache_dir: str | None = None

    def __post_init__(self):
        self.kernels = tuple(self.kernels)
        bad = [k for k in self.kernels if k not in KERNELS]
        if bad:
            raise ValueError(f"unknown kernels {bad}; choose from {KERNELS}")
        for name in ("batch", "seq_len", "m", "d", "k", "seeds", "dense_tokens", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.timed < 0 or self.warmup < 0:
            raise ValueError("run counts must be non-negative")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")

    def to_dict(self):
        out = asdict(self)
        out["kernels"] = list(self.kernels)
        return out


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.rows)

    def summary(self) -> dict:
        """``{kernel: (mean over seed means, std over seed means, tokens/sec)}``."""
        out = {}
        for name in dict.fromkeys(r["kernel"] for r in self.rows):
            means = np.array([r["mean_ms"] for r in self.rows if r["kernel"] == name])
            tps = np.mean([r["tokens_per_sec"] for r in self.rows if r["kernel"] == name])
            out[name] = (float(means.mean()), float(means.std(ddof=1)) if len(means) > 1 else 0.0,
                         float(tps))
        return out

    def per_seed(self, kernel) -> np.ndarray:
        return np.array([r["mean_ms"] for r in self.rows if r["kernel"] == kernel])


def cached_graph(emb, k, metric, cache_dir=None, tag="") -> NeighborGraph:
    """Exact k-NN graph, memoised on disk when ``cache_dir`` is set."""
    if cache_dir is None:
        return build_neighbor_graph(emb, k, metric)
    key = hashlib.sha1(emb.vectors.tobytes()).hexdigest()[:16]
    path = os.path.join(cache_dir, f"knn_{tag}{key}_{k}_{metric}.npz")
    if os.path.exists(path):
        z = np.load(path)
        return NeighborGraph(z["ids"], z["dists"], z["rho"], metric)
    g = build_neighbor_graph(emb, k, metric)
    os.makedirs(cache_dir, exist_ok=True)
    np.savez(path, ids=g.ids, dists=g.dists, rho=g.rho)
    return g


def _build(name, emb, cfg, graphs):
    if name == "absorb":
        return AbsorbKernel(cfg.m)
    if name == "uniform":
        return UniformKernel(cfg.m)
    metric = name.rsplit("_", 1)[1]
    if metric not in graphs:
        graphs[metric] = cached_graph(emb, cfg.k, metric, cfg.cache_dir)
    g = graphs[metric]
    if name.startswith("sik_knn"):
        return SikKnnKernel(emb, g, Temperature(), Mixture())
    return SikDenseKernel(emb, metric, Temperature(), rho=g.rho)


def _time_once(fn):
    """Seconds per call, repeating calls until the run exceeds the timer floor."""
    reps = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        dt = time.perf_counter() - t0
        if dt >= MIN_RUN_S:
            return dt / reps
        reps *= 4


def run_bench(cfg: BenchConfig, log=None) -> BenchResult:
    """Time every configured kernel; an empty result means nothing was timed."""
    result = BenchResult()
    if cfg.timed == 0:
        return result
    emb = cluster_embeddings(cfg.m, cfg.d, n_clusters=64, seed=cfg.embedding_seed)
    sched = LogLinear()
    graphs = {}
    full = cfg.batch * cfg.seq_len
    for name in cfg.kernels:
        kern = _build(name, emb, cfg, graphs)
        for seed in range(cfg.seeds):
            rng = np.random.default_rng([cfg.embedding_seed, seed])
            x0 = rng.integers(0, cfg.m, size=(cfg.batch, cfg.seq_len))
            if name.startswith("sik_dense") and cfg.dense_tokens < full:
                x0 = x0.reshape(-1)[:cfg.dense_tokens]
            scale = full / x0.size
            runs = []
            for r in range(cfg.warmup + cfg.timed):
                def fn():
                    noise_batch(kern, sched, x0, cfg.t, 1000 * seed + r, record=False,
                                workers=cfg.workers)
                dt = _time_once(fn) * scale
                if r >= cfg.warmup:
                    runs.append(dt)
            runs = np.array(runs) * 1e3
            row = {"kernel": name, "seed": seed, "mean_ms": float(runs.mean()),
                   "std_ms": float(runs.std(ddof=1)) if len(runs) > 1 else 0.0,
                   "tokens_per_sec": float(full / (runs.mean() / 1e3))}
            result.rows.append(row)
            if log is not None:
                log(row)
    return result


def write_csv(path, result: BenchResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["kernel", "seed", "mean_ms", "std_ms", "tokens_per_sec"])
        w.writeheader()
        for r in result.rows:
            w.writerow(r)


def write_svg(path, result: BenchResult) -> None:
    """Bar chart of mean latency per kernel (log scale) with std whiskers."""
    summ = result.summary()
    names = list(summ)
    vals = np.array([summ[n][0] for n in names])
    errs = np.array([summ[n][1] for n in names])
    W, H, pad, bar = 120 * max(len(names), 1) + 80, 320, 50, 60
    lo = np.floor(np.log10(max(vals.min(), 1e-3))) if len(vals) else 0
    hi = np.ceil(np.log10(max(vals.max() + errs.max(), 1e-2))) if len(vals) else 1
    hi = max(hi, lo + 1)

    def y(v):
        return H - pad - (np.log10(max(v, 10 ** lo)) - lo) / (hi - lo) * (H - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" '
             f'font-size="11">',
             f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="13">Noising latency (ms, log scale)'
             f'</text>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - 10}" y2="{H - pad}" stroke="black"/>']
    for e in range(int(lo), int(hi) + 1):
        parts.append(f'<text x="{pad - 5}" y="{y(10 ** e) + 4:.1f}" text-anchor="end">1e{e}</text>')
    for i, (n, v, s) in enumerate(zip(names, vals, errs)):
        x = pad + 20 + i * 120
        parts.append(f'<rect x="{x}" y="{y(v):.1f}" width="{bar}" height="{H - pad - y(v):.1f}" '
                     f'fill="#4a7ab5"/>')
        parts.append(f'<line x1="{x + bar / 2}" y1="{y(v + s):.1f}" x2="{x + bar / 2}" '
                     f'y2="{y(max(v - s, 10 ** lo)):.1f}" stroke="black"/>')
        parts.append(f'<text x="{x + bar / 2}" y="{H - pad + 15}" text-anchor="middle">{n}</text>')
        parts.append(f'<text x="{x + bar / 2}" y="{y(v) - 5:.1f}" text-anchor="middle">{v:.3g}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
