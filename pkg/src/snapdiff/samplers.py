"""Reverse-time ancestral samplers.

Every sampler plugs the model's clean-token prediction ``mu`` into the
Bayes reverse kernel

    p(x_s | x_t) = K_{t,s}(x_t, x_s) (K_{s,0} mu)(x_s) / (K_{t,0} mu)(x_t),

in closed form for the uniform and absorbing kernels, and through cached
uniformization-series propagators for semantic kernels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import AbsorbKernel, JumpKernel, UniformKernel
from .oracle import posterior_clean, transition_grid
from .rng import KeyedStreams, as_streams
from .uniformize import resolve_workers
from .schedules import Schedule

__all__ = [
    "DecodingGrid",
    "ExactPosteriorModel",
    "SeriesDivergence",
    "DegenerateKernel",
    "ancestral_kernel_uniform",
    "ancestral_kernel_absorb",
    "ancestral_kernel_sik",
    "ancestral_kernel_bridge",
    "ancestral_kernel_uniform_bridge",
    "ancestral_step_uniform",
    "ancestral_step_absorb",
    "ancestral_step_sik",
    "PropagatorCache",
    "generate",
    "categorical",
]

NORM_TOL = 1e-6


class SeriesDivergence(RuntimeError):
    pass


class DegenerateKernel(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class DecodingGrid:
    """Uniform decoding times ``t_k = k / K`` for ``k = K, ..., 0``."""

    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one decoding step")

    @property
    def times(self) -> np.ndarray:
        """Decreasing from 1 to 0."""
        return np.linspace(1.0, 0.0, self.steps + 1)


class ExactPosteriorModel:
    """Mean model returning the true posterior ``q(x0 | x_t)`` from the dense oracle."""

    role = "mean"

    def __init__(self, kern: JumpKernel, sched: Schedule, qdata):
        self.kern, self.sched = kern, sched
        self.qdata = np.asarray(qdata, dtype=np.float64)
        self._cache = {}

    def table(self, t: float) -> np.ndarray:
        """``P[x_t, x0] = q(x0 | x_t)``; rows of impossible snapshots fall back to ``q_data``."""
        t = float(t)
        if t not in self._cache:
            K = transition_grid(self.kern, self.sched, [t])[0]
            joint = K * self.qdata[None, :]
            z = joint.sum(axis=1, keepdims=True)
            self._cache[t] = np.where(z > 0, joint / np.where(z > 0, z, 1.0), self.qdata[None, :])
        return self._cache[t]

    def predict(self, x, t):
        if np.ndim(t) == 0:
            return self.table(t)[x]
        # per-token times: one oracle pass over the sorted unique times
        x = np.asarray(x)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape)
        uniq, inv = np.unique(t, return_inverse=True)
        Ks = transition_grid(self.kern, self.sched, uniq)
        joint = Ks[inv.reshape(x.shape), x] * self.qdata
        z = joint.sum(axis=-1, keepdims=True)
        return np.where(z > 0, joint / np.where(z > 0, z, 1.0), self.qdata)

    __call__ = predict

    def posterior(self, x_t, t):
        return posterior_clean(self.kern, self.sched, self.qdata, x_t, t)


def categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF sampling."""
    cum = np.cumsum(probs, axis=1)
    idx = (cum <= u[:, None] * cum[:, -1:]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _check_norm(p):
    s = p.sum(axis=1)
    if np.any(~np.isfinite(s)) or np.any(np.abs(s - 1.0) > NORM_TOL) or p.min(initial=0.0) < -NORM_TOL:
        raise DegenerateKernel(f"ancestral kernel not normalised: sums in [{s.min():.3e}, {s.max():.3e}]")
    return np.maximum(p, 0.0) / s[:, None]


def ancestral_kernel_uniform(mu, sched, x_t, t, s):
    """Rows ``p(x_s | x_t)`` for the uniform kernel; ``mu`` has one row per position."""
    mu = np.atleast_2d(mu)
    n, m = mu.shape
    x_t = np.atleast_1d(x_t)
    at, as_ = sched.alpha(t), sched.alpha(s)
    ats = sched.alpha_ratio(t, s)
    num = (1.0 - ats) / m * (as_ * mu + (1.0 - as_) / m)
    num[np.arange(n), x_t] += ats * (as_ * mu[np.arange(n), x_t] + (1.0 - as_) / m)
    den = at * mu[np.arange(n), x_t] + (1.0 - at) / m
    if np.any(den <= 1e-300):
        raise DegenerateKernel("vanishing ancestral normaliser")
    return _check_norm(num / den[:, None])


def ancestral_kernel_absorb(mu, sched, x_t, t, s, mask_id):
    """Rows ``p(x_s | x_t)`` for the absorbing kernel; ``mu`` is renormalised off the mask."""
    mu = np.array(np.atleast_2d(mu), dtype=np.float64)
    n, m = mu.shape
    x_t = np.atleast_1d(x_t)
    mu[:, mask_id] = 0.0
    mu /= mu.sum(axis=1, keepdims=True)
    at, as_ = sched.alpha(t), sched.alpha(s)
    out = np.zeros((n, m))
    masked = x_t == mask_id
    out[np.flatnonzero(~masked), x_t[~masked]] = 1.0
    if np.any(masked):
        if 1.0 - at <= 1e-300:
            raise DegenerateKernel("vanishing ancestral normaliser")
        out[masked] = (as_ - at) / (1.0 - at) * mu[masked]
        out[masked, mask_id] = (1.0 - as_) / (1.0 - at)
    return _check_norm(out)


def ancestral_kernel_bridge(mu, K_ts, K_s0, K_t0, x_t):
    """Posterior-averaged Bayes bridge ``sum_x0 mu(x0) q(x_s | x_t, x0)``.

    Clean tokens that cannot produce ``x_t`` are dropped and ``mu`` is
    renormalised over the rest.  With the exact posterior this is the exact
    reverse kernel.
    """
    mu = np.atleast_2d(mu)
    x_t = np.atleast_1d(x_t)
    lik = K_t0[x_t]
    w = np.divide(mu, lik, out=np.zeros_like(mu), where=lik > 0)
    compatible = np.where(lik > 0, mu, 0.0).sum(axis=1)
    if np.any(compatible <= 1e-300):
        raise DegenerateKernel("model puts no mass on clean tokens compatible with x_t")
    return _check_norm(K_ts[x_t] * (w @ K_s0.T) / compatible[:, None])


def ancestral_kernel_uniform_bridge(mu, sched, x_t, t, s):
    """Closed-form :func:`ancestral_kernel_bridge` for the uniform kernel."""
    mu = np.atleast_2d(mu)
    n, m = mu.shape
    x_t = np.atleast_1d(x_t)
    rows = np.arange(n)
    at, as_, ats = sched.alpha(t), sched.alpha(s), sched.alpha_ratio(t, s)
    lik = np.full((n, m), (1.0 - at) / m)
    lik[rows, x_t] += at
    w = mu / lik
    mix = as_ * w + (1.0 - as_) / m * w.sum(axis=1, keepdims=True)
    out = (1.0 - ats) / m * mix
    out[rows, x_t] += ats * mix[rows, x_t]
    return _check_norm(out)


def ancestral_step_uniform(model, sched, x_t, t, s, rng=0, plugin="mixture"):
    x_t = np.atleast_1d(x_t)
    streams = as_streams(rng, len(x_t))
    f = ancestral_kernel_uniform if plugin == "mixture" else ancestral_kernel_uniform_bridge
    p = f(model.predict(x_t, t), sched, x_t, t, s)
    return categorical(p, streams.at(np.arange(len(x_t)), np.zeros(len(x_t), dtype=np.int64)))


def ancestral_step_absorb(model, sched, x_t, t, s, rng=0, mask_id=None):
    x_t = np.atleast_1d(x_t)
    mu = np.atleast_2d(model.predict(x_t, t))
    mask_id = mu.shape[1] - 1 if mask_id is None else mask_id
    streams = as_streams(rng, len(x_t))
    p = ancestral_kernel_absorb(mu, sched, x_t, t, s, mask_id)
    return categorical(p, streams.at(np.arange(len(x_t)), np.zeros(len(x_t), dtype=np.int64)))


class PropagatorCache:
    """Transition operators on a time grid from uniformization series.

    Over a sub-interval with integrated rate ``h`` the kernel is frozen at the
    sub-interval midpoint and ``exp(h (F - I)) v`` is summed as
    ``sum_n Poisson(n; h) F^n v`` until the remaining Poisson mass is below
    ``tol``.  ``K_{t_k,0}`` and the one-step operators are cached per grid time.

    Parameters
    ----------
    max_du : float
        Largest integrated rate per frozen sub-interval.
    matvec_budget : int
        Total number of kernel applications allowed before giving up.
    """

    def __init__(self, kern: JumpKernel, sched: Schedule, times, max_du: float = 0.01,
                 tol: float = 1e-8, matvec_budget: int = 10**7):
        self.kern, self.sched = kern, sched
        self.tol, self.max_du, self.budget = tol, max_du, matvec_budget
        self.matvecs = 0
        self.times = np.sort(np.unique(np.asarray(times, dtype=np.float64)))
        if self.times[0] != 0.0:
            self.times = np.concatenate([[0.0], self.times])
        eye = np.eye(kern.m)
        self.step_ops = {}
        self.from_zero = {0.0: eye}
        K = eye
        for a, b in zip(self.times[:-1], self.times[1:]):
            P = self._propagate(a, b, eye)
            self.step_ops[(float(a), float(b))] = P
            K = P @ K
            self.from_zero[float(b)] = K

    def _series(self, t_mid, h, V):
        out = np.exp(-h) * V
        term, weight, mass = V, np.exp(-h), np.exp(-h)
        n = 0
        while 1.0 - mass > self.tol:
            n += 1
            if self.matvecs >= self.budget:
                raise SeriesDivergence(f"series for integrated rate {h:.3e} not converged "
                                       f"within {self.budget} kernel applications")
            term = self.kern.apply(t_mid, term)
            self.matvecs += 1
            weight *= h / n
            mass += weight
            out = out + weight * term
        return out

    def _propagate(self, s, t, V):
        us, ut = self.sched.integrated_rate(s), self.sched.integrated_rate(t)
        n_sub = max(1, int(np.ceil((ut - us) / self.max_du)))
        edges_u = np.linspace(us, ut, n_sub + 1)
        top = self.sched.integrated_rate(1.0)
        for a, b in zip(edges_u[:-1], edges_u[1:]):
            t_mid = float(self.sched.inverse_integrated_rate(min(0.5 * (a + b), top)))
            V = self._series(t_mid, b - a, V)
        return V

    def step(self, s, t):
        """``K_{t,s}`` for adjacent grid times ``s < t``."""
        return self.step_ops[(float(s), float(t))]

    def at(self, t):
        return self.from_zero[float(t)]


def ancestral_kernel_sik(mu, cache: PropagatorCache, x_t, t, s):
    """Rows ``p(x_s | x_t)`` from cached operators for an arbitrary kernel."""
    mu = np.atleast_2d(mu)
    x_t = np.atleast_1d(x_t)
    if s == t:
        return np.eye(mu.shape[1])[x_t]
    K_ts, K_s0, K_t0 = cache.step(s, t), cache.at(s), cache.at(t)
    num = K_ts[x_t] * (mu @ K_s0.T)
    den = (K_t0[x_t] * mu).sum(axis=1)
    if np.any(den <= 1e-300):
        raise DegenerateKernel("vanishing ancestral normaliser")
    return _check_norm(num / den[:, None])


def ancestral_step_sik(model, kern, sched, x_t, t, s, rng=0, cache: PropagatorCache | None = None,
                       matvec_budget: int = 10**7, plugin="mixture"):
    x_t = np.atleast_1d(x_t)
    if s == t:
        return x_t.copy()
    if cache is None:
        cache = PropagatorCache(kern, sched, [s, t], matvec_budget=matvec_budget)
    streams = as_streams(rng, len(x_t))
    mu = model.predict(x_t, t)
    if plugin == "mixture":
        p = ancestral_kernel_sik(mu, cache, x_t, t, s)
    else:
        p = ancestral_kernel_bridge(mu, cache.step(s, t), cache.at(s), cache.at(t), x_t)
    return categorical(p, streams.at(np.arange(len(x_t)), np.zeros(len(x_t), dtype=np.int64)))


def _variant(kern):
    if isinstance(kern, UniformKernel):
        return "uniform"
    if isinstance(kern, AbsorbKernel):
        return "absorb"
    return "operator"


def generate(model, kern: JumpKernel, sched: Schedule, grid: DecodingGrid, length: int,
             num: int = 1, seed: int = 0, cache: PropagatorCache | None = None, return_calls=False,
             plugin: str = "mixture", workers: int | None = 1):
    """Draw ``num`` sequences of ``length`` tokens by ancestral sampling.

    ``plugin="mixture"`` pushes ``mu`` through the forward marginals (the
    closed forms above); ``plugin="bridge"`` averages the exact per-token
    Bayes bridges under ``mu``.  The two coincide for the absorbing kernel.

    Position ``(i, j)`` uses the keyed stream ``(seed, i, j)``: counter 0
    initialises it and counter ``k`` drives decoding step ``k``.  Sequences
    are split into contiguous blocks over ``workers`` threads; the output
    does not depend on the worker count.
    """
    if getattr(model, "role", "mean") != "mean":
        raise ValueError("generation needs a mean model")
    if plugin not in ("mixture", "bridge"):
        raise ValueError(f"unknown plug-in rule {plugin!r}")
    variant = _variant(kern)
    times = grid.times
    if variant == "operator" and cache is None:
        cache = PropagatorCache(kern, sched, times)
    workers = min(resolve_workers(workers), num)

    def block(lo, hi):
        return _decode(model, kern, sched, times, variant, cache, plugin, seed, lo, hi, length)

    if workers == 1:
        out = block(0, num)
    else:
        bounds = np.linspace(0, num, workers + 1).astype(np.int64)
        with ThreadPoolExecutor(workers) as pool:
            out = np.concatenate(list(pool.map(block, bounds[:-1], bounds[1:])))
    return (out, grid.steps) if return_calls else out


def _decode(model, kern, sched, times, variant, cache, plugin, seed, lo, hi, length):
    rows, cols = np.indices((hi - lo, length))
    streams = KeyedStreams(seed, cols.ravel(), rows.ravel() + lo)
    n = (hi - lo) * length
    idx = np.arange(n)
    u0 = streams.at(idx, np.zeros(n, dtype=np.int64))
    if variant == "uniform":
        x = np.minimum((u0 * kern.m).astype(np.int64), kern.m - 1)
    elif variant == "absorb":
        x = np.full(n, kern.mask_id, dtype=np.int64)
    else:
        pi = kern.stationary(1.0)
        x = categorical(np.broadcast_to(pi, (n, kern.m)), u0)
    for k, (t, s) in enumerate(zip(times[:-1], times[1:]), start=1):
        mu = model.predict(x, t)
        if variant == "uniform":
            f = ancestral_kernel_uniform if plugin == "mixture" else ancestral_kernel_uniform_bridge
            p = f(mu, sched, x, t, s)
        elif variant == "absorb":
            p = ancestral_kernel_absorb(mu, sched, x, t, s, kern.mask_id)
        elif plugin == "mixture":
            p = ancestral_kernel_sik(mu, cache, x, t, s)
        else:
            p = ancestral_kernel_bridge(mu, cache.step(s, t), cache.at(s), cache.at(t), x)
        x = categorical(p, streams.at(idx, np.full(n, k, dtype=np.int64)))
    return x.reshape(hi - lo, length)
