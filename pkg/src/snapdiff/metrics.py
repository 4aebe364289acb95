"""Likelihood and diversity metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .uniformize import noise_batch

__all__ = ["EvalReport", "nll_bound_snapshot", "distinct_n", "unigram_entropy"]


@dataclass
class EvalReport:
    """NLL in nats per token with its derived BPC and PPL."""

    nll: float
    nll_se: float = 0.0
    entropy_mean: float = float("nan")
    distinct: dict = field(default_factory=dict)
    n_sequences: int = 0
    seq_len: int = 0

    @property
    def bpc(self) -> float:
        return self.nll / math.log(2.0)

    @property
    def ppl(self) -> float:
        return math.exp(self.nll)

    def to_dict(self):
        out = asdict(self)
        out["bpc"], out["ppl"] = self.bpc, self.ppl
        out["distinct"] = {str(k): v for k, v in self.distinct.items()}
        return out

    def csv_row(self) -> str:
        d = [self.distinct.get(n, float("nan")) for n in (1, 2, 3)]
        vals = [self.nll, self.nll_se, self.bpc, self.ppl, self.entropy_mean, *d]
        return ",".join(f"{v:.10g}" for v in vals)

    CSV_HEADER = "nll,nll_se,bpc,ppl,entropy_mean,distinct_1,distinct_2,distinct_3"


def _as_sequences(samples):
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        return list(samples)
    return [np.asarray(s) for s in samples]


def distinct_n(samples, n: int) -> float:
    """Distinct n-gram ratio.

    Union over samples of each sample's unique n-grams, divided by the total
    number of n-grams.  Samples shorter than ``n`` contribute nothing.
    """
    seqs = _as_sequences(samples)
    if not seqs:
        raise ValueError("need at least one sample")
    union = set()
    total = 0
    for s in seqs:
        count = len(s) - n + 1
        if count <= 0:
            continue
        total += count
        grams = np.lib.stride_tricks.sliding_window_view(np.asarray(s), n)
        union.update(map(tuple, np.unique(grams, axis=0).tolist()))
    return len(union) / total if total else 0.0


def unigram_entropy(samples) -> float:
    """Mean over samples of the Shannon entropy (nats) of within-sample token frequencies."""
    seqs = _as_sequences(samples)
    if not seqs:
        raise ValueError("need at least one sample")
    ents = []
    for s in seqs:
        _, counts = np.unique(np.asarray(s), return_counts=True)
        p = counts / counts.sum()
        ents.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(ents))


def nll_bound_snapshot(model, kern, sched, corpus, mc_samples: int = 1, seed: int = 0,
                       workers: int = 1) -> EvalReport:
    """Monte Carlo snapshot bound on the per-token NLL.

    Each clean token is noised at ``mc_samples`` uniform times and scored by
    ``-log mu(x_t, t)[x0]``.  The standard error is taken over per-token means.
    """
    seqs = np.atleast_2d(np.asarray(corpus))
    flat = seqs.reshape(-1)
    rng = np.random.default_rng(seed)
    total = np.zeros(flat.size)
    for r in range(mc_samples):
        t = rng.random(flat.size)
        xt, _ = noise_batch(kern, sched, flat, t, int(rng.integers(2**63)), record=False,
                            workers=workers)
        p = model.predict(xt, t)
        total += -np.log(p[np.arange(flat.size), flat])
    per_token = total / mc_samples
    se = float(per_token.std(ddof=1) / np.sqrt(flat.size)) if flat.size > 1 else 0.0
    return EvalReport(nll=float(per_token.mean()), nll_se=se, entropy_mean=unigram_entropy(seqs),
                      distinct={n: distinct_n(seqs, n) for n in (1, 2, 3)},
                      n_sequences=seqs.shape[0], seq_len=seqs.shape[1])
