"""Dense small-vocabulary ground truth.

Transition operators are integrated in the integrated-rate clock
``u = fbar(t)``, where the forward equation reads ``dK/du = (F - I) K`` and
stays non-stiff even when the exit rate blows up near ``t = 1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .kernels import DENSE_LIMIT, JumpKernel
from .schedules import Schedule

__all__ = [
    "IntegrationError",
    "ConditioningError",
    "generator_at",
    "transition",
    "transition_grid",
    "mixing_matrix",
    "marginal",
    "posterior_clean",
    "reverse_generator",
    "conditional_reverse",
    "bayes_reverse_kernel",
    "recovered_generator",
    "oracle_check",
]

RICHARDSON_TOL = 1e-8


class IntegrationError(RuntimeError):
    pass


class ConditioningError(ArithmeticError):
    pass


def _check_m(kern):
    if kern.m > DENSE_LIMIT:
        raise MemoryError(f"dense oracle limited to m <= {DENSE_LIMIT}, got {kern.m}")


def generator_at(kern: JumpKernel, sched: Schedule, t: float) -> np.ndarray:
    """Rate matrix ``Q_t = f(t) (F_t - I)``; column ``j`` holds the outflow of ``j``."""
    _check_m(kern)
    return sched.exit_rate(t) * (kern.matrix(t) - np.eye(kern.m))


def _rk4(kern, sched, u_nodes, y0, rhs):
    """Integrate ``dy/du = rhs(u, F(t(u)), y)`` through the increasing nodes ``u_nodes``."""
    u_nodes = np.asarray(u_nodes, dtype=np.float64)
    h = np.diff(u_nodes)
    top = float(sched.integrated_rate(1.0))
    u_all = np.concatenate([u_nodes, u_nodes[:-1] + 0.5 * h])
    t_all = sched.inverse_integrated_rate(np.minimum(u_all, top))
    t_all = np.atleast_1d(t_all)
    n = len(u_nodes)
    mats = kern.matrices(t_all)

    ys = [y0]
    y = y0
    for i in range(n - 1):
        hi = h[i]
        if hi == 0.0:
            ys.append(y)
            continue
        u, mid = u_nodes[i], u_nodes[i] + 0.5 * hi
        Fa, Fm, Fb = mats[i], mats[n + i], mats[i + 1]
        k1 = rhs(u, Fa, y)
        k2 = rhs(mid, Fm, y + 0.5 * hi * k1)
        k3 = rhs(mid, Fm, y + 0.5 * hi * k2)
        k4 = rhs(u + hi, Fb, y + hi * k3)
        y = y + hi / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys.append(y)
    return ys


def _integrate(kern, sched, s, times, y0, rhs, steps):
    """Values at each of ``times`` (sorted, >= s) with a Richardson step check."""
    us = float(sched.integrated_rate(s))
    targets = np.atleast_1d(np.asarray(sched.integrated_rate(np.asarray(times)), dtype=np.float64))
    span = targets.max() - us if len(targets) else 0.0
    if span <= 0.0:
        return [y0.copy() for _ in targets]
    last_err = None
    for attempt in range(6):
        results = []
        for n in (steps, 2 * steps):
            base = us + span * np.arange(n + 1) / n
            nodes, inv = np.unique(np.concatenate([base, targets]), return_inverse=True)
            ys = _rk4(kern, sched, nodes, y0, rhs)
            results.append([ys[j] for j in inv[n + 1:]])
        err = max(np.abs(a - b).max() for a, b in zip(*results))
        if err < RICHARDSON_TOL:
            return results[1]
        last_err = err
        steps *= 2
    raise IntegrationError(f"RK4 did not settle: step-halving difference {last_err:.3e} "
                           f"with {steps} steps over integrated rate {span:.4f}")


def _forward_rhs(u, F, K):
    return F @ K - K


def _mixing_rhs(u, F, G):
    # G = (1 - alpha) Pi obeys dG/du = F (alpha I + G) - G with alpha = exp(-u)
    return F @ (np.exp(-u) * np.eye(len(G)) + G) - G


def transition_grid(kern: JumpKernel, sched: Schedule, times, s: float = 0.0,
                    steps: int = 2048) -> np.ndarray:
    """``K_{t,s}`` for every ``t`` in ``times`` (each ``>= s``), shape ``(len, m, m)``."""
    _check_m(kern)
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < s) or s < 0 or np.any(times > 1):
        raise ValueError("need 0 <= s <= t <= 1")
    eye = np.eye(kern.m)
    if kern.time_homogeneous:
        A = kern.matrix(0.0) - eye
        du = np.asarray(sched.integrated_rate(times)) - sched.integrated_rate(s)
        return np.stack([expm(d * A) for d in np.atleast_1d(du)])
    order = np.argsort(times, kind="stable")
    out = _integrate(kern, sched, s, times[order], eye, _forward_rhs, steps)
    res = np.empty((len(times), kern.m, kern.m))
    res[order] = np.stack(out)
    return res


def transition(kern: JumpKernel, sched: Schedule, s: float, t: float, steps: int = 2048) -> np.ndarray:
    """``K_{t,s}``: column ``y`` is the law at ``t`` of the chain started at ``y`` at ``s``."""
    if t < s:
        raise ValueError("need s <= t")
    return transition_grid(kern, sched, [t], s, steps)[0]


def mixing_matrix(kern: JumpKernel, sched: Schedule, t: float, method: str = "ode",
                  steps: int = 2048) -> np.ndarray:
    """``Pi_t`` with ``K_{t,0} = alpha_t I + (1 - alpha_t) Pi_t``.

    ``method="ode"`` integrates ``(1 - alpha) Pi`` directly; ``"recover"``
    rearranges the integrated transition operator.
    """
    _check_m(kern)
    a = sched.alpha(t)
    if 1.0 - a < 1e-10:
        raise ConditioningError(f"1 - alpha = {1 - a:.2e} too small to recover the mixing matrix")
    if method == "recover":
        return (transition(kern, sched, 0.0, t, steps) - a * np.eye(kern.m)) / (1.0 - a)
    if method != "ode":
        raise ValueError(f"unknown method {method!r}")
    if kern.time_homogeneous:
        # closed form: G = (1 - alpha) Pi = expm(u (F - I)) - alpha I
        return (transition(kern, sched, 0.0, t) - a * np.eye(kern.m)) / (1.0 - a)
    G = _integrate(kern, sched, 0.0, [t], np.zeros((kern.m, kern.m)), _mixing_rhs, steps)[0]
    return G / (1.0 - a)


def marginal(K: np.ndarray, qdata) -> np.ndarray:
    return K @ np.asarray(qdata, dtype=np.float64)


def _check_dist(q, m):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (m,) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
        raise ValueError("data distribution must be a probability vector of length m")
    return q


def posterior_clean(kern: JumpKernel, sched: Schedule, qdata, x_t: int, t: float,
                    K: np.ndarray | None = None) -> np.ndarray:
    """``q(x0 | x_t)`` proportional to ``q_data(x0) K_{t,0}(x_t, x0)``."""
    qdata = _check_dist(qdata, kern.m)
    K = transition(kern, sched, 0.0, t) if K is None else K
    w = qdata * K[x_t]
    z = w.sum()
    if z <= 0:
        raise ZeroDivisionError(f"snapshot {x_t} has zero probability at t={t}")
    return w / z


def _split_generator(Qbar):
    """``Qbar = (R - I) diag(r)``; columns with ``r = 0`` give ``R = 0``."""
    r = -np.diag(Qbar).copy()
    r[np.abs(r) < 1e-300] = 0.0
    R = Qbar + np.diag(r)
    np.fill_diagonal(R, 0.0)
    R = np.divide(R, r, out=np.zeros_like(R), where=r > 0)
    return R, r


def reverse_generator(kern: JumpKernel, sched: Schedule, qdata, t: float, K=None):
    """Time-reversed rates ``Qbar(i, j) = q_t(i) / q_t(j) Q(j, i)``.

    Returns
    -------
    Qbar, r, R
        The reverse generator, its exit rates ``r_j = -Qbar(j, j)`` and the
        reverse jump kernel with ``Qbar = (R - I) diag(r)``.  Entries whose
        conditioning marginal vanishes are 0.
    """
    qdata = _check_dist(qdata, kern.m)
    K = transition(kern, sched, 0.0, t) if K is None else K
    q = K @ qdata
    Q = generator_at(kern, sched, t)
    ratio = np.divide(q[:, None], q[None, :], out=np.zeros((kern.m, kern.m)), where=q[None, :] > 0)
    Qbar = ratio * Q.T
    np.fill_diagonal(Qbar, 0.0)
    np.fill_diagonal(Qbar, -Qbar.sum(axis=0))
    R, r = _split_generator(Qbar)
    return Qbar, r, R


def conditional_reverse(kern: JumpKernel, sched: Schedule, x0: int, t: float, K=None):
    """Reverse jump kernel and exit rates given the clean token.

    ``r[x] = sum_{y != x} q(y|x0) / q(x|x0) Q(x, y)`` and
    ``R[y, x] = q(y|x0) / q(x|x0) Q(x, y) / r[x]``; unsupported columns are 0.
    """
    K = transition(kern, sched, 0.0, t) if K is None else K
    q = K[:, x0]
    Q = generator_at(kern, sched, t)
    # W[y, x] = q(y) / q(x) * Q(x, y)
    W = np.divide(q[:, None] * Q.T, q[None, :], out=np.zeros((kern.m, kern.m)),
                  where=q[None, :] > 0)
    np.fill_diagonal(W, 0.0)
    r = W.sum(axis=0)
    R = np.divide(W, r, out=np.zeros_like(W), where=r > 0)
    return R, r


def bayes_reverse_kernel(K_ts: np.ndarray, K_s0: np.ndarray, K_t0: np.ndarray, mu: np.ndarray,
                         x_t: int) -> np.ndarray:
    """Plug-in ancestral kernel over ``x_s``.

    ``p(x_s) = K_{t,s}(x_t, x_s) sum_x0 mu(x0) K_{s,0}(x_s, x0) / sum_x0 mu(x0) K_{t,0}(x_t, x0)``.
    """
    num = K_ts[x_t] * (K_s0 @ mu)
    den = K_t0[x_t] @ mu
    if den <= 1e-300:
        raise ZeroDivisionError("degenerate ancestral normaliser")
    return num / den


def recovered_generator(kern: JumpKernel, sched: Schedule, t: float, h: float = 1e-4) -> np.ndarray:
    """Centered finite difference of ``K_{t,0}`` times its inverse."""
    Ks = transition_grid(kern, sched, [t - h, t, t + h])
    dK = (Ks[2] - Ks[0]) / (2 * h)
    return dK @ np.linalg.inv(Ks[1])


@dataclass
class _Check:
    max_err: float
    tol: float

    def as_dict(self):
        return {"pass": bool(self.max_err <= self.tol), "max_err": float(self.max_err)}


def oracle_check(kern: JumpKernel, sched: Schedule, qdata=None, times=None, seed: int = 0) -> dict:
    """Run the dense invariant battery; returns ``{name: {"pass", "max_err"}}``."""
    m = kern.m
    times = np.linspace(0.1, 0.9, 5) if times is None else np.asarray(times)
    if qdata is None:
        qdata = np.random.default_rng(seed).dirichlet(np.ones(m))
    eye = np.eye(m)
    Ks = transition_grid(kern, sched, times)
    errs = {k: 0.0 for k in ("kernel_columns", "generator_columns", "transition_columns",
                             "interpolation_identity", "mixing_columns", "chapman_kolmogorov",
                             "generator_recovery", "generator_validity", "marginal_evolution",
                             "reverse_columns", "conditional_reverse_columns")}
    tols = {"kernel_columns": 1e-9, "generator_columns": 1e-10, "transition_columns": 1e-8,
            "interpolation_identity": 1e-8, "mixing_columns": 1e-8, "chapman_kolmogorov": 1e-8,
            "generator_recovery": 1e-4, "generator_validity": 1e-6, "marginal_evolution": 1e-4,
            "reverse_columns": 1e-9, "conditional_reverse_columns": 1e-9}
    for t, K in zip(times, Ks):
        F = kern.matrix(t)
        errs["kernel_columns"] = max(errs["kernel_columns"], np.abs(F.sum(0) - 1).max(), -F.min())
        Q = generator_at(kern, sched, t)
        errs["generator_columns"] = max(errs["generator_columns"], np.abs(Q.sum(0)).max())
        errs["transition_columns"] = max(errs["transition_columns"], np.abs(K.sum(0) - 1).max(), -K.min())
        a = sched.alpha(t)
        Pi = mixing_matrix(kern, sched, t)
        errs["interpolation_identity"] = max(errs["interpolation_identity"],
                                             np.abs(K - (a * eye + (1 - a) * Pi)).max())
        errs["mixing_columns"] = max(errs["mixing_columns"], np.abs(Pi.sum(0) - 1).max(), -Pi.min())
        s = 0.5 * t
        ck = transition(kern, sched, s, t) @ transition(kern, sched, 0.0, s)
        errs["chapman_kolmogorov"] = max(errs["chapman_kolmogorov"], np.abs(ck - K).max())
        Qr = recovered_generator(kern, sched, t)
        errs["generator_recovery"] = max(errs["generator_recovery"], np.abs(Qr - Q).max())
        off = Qr - np.diag(np.diag(Qr))
        if off.min() < -1e-6:
            warnings.warn(f"recovered generator has negative off-diagonal {off.min():.2e} at t={t}",
                          RuntimeWarning, stacklevel=2)
        errs["generator_validity"] = max(errs["generator_validity"], -off.min())
        h = 1e-4
        qq = transition_grid(kern, sched, [t - h, t + h]) @ qdata
        dq = (qq[1] - qq[0]) / (2 * h)
        errs["marginal_evolution"] = max(errs["marginal_evolution"], np.abs(dq - Q @ (K @ qdata)).max())
        Qbar, r, R = reverse_generator(kern, sched, qdata, t, K)
        live = r > 0
        errs["reverse_columns"] = max(errs["reverse_columns"], np.abs(Qbar.sum(0)).max(),
                                      np.abs(R[:, live].sum(0) - 1).max(initial=0.0))
        for x0 in range(m):
            Rc, rc = conditional_reverse(kern, sched, x0, t, K)
            live = rc > 0
            errs["conditional_reverse_columns"] = max(
                errs["conditional_reverse_columns"], np.abs(Rc[:, live].sum(0) - 1).max(initial=0.0))
    return {k: _Check(v, tols[k]).as_dict() for k, v in errs.items()}
