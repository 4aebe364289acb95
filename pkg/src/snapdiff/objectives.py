"""Training objectives and calibration diagnostics.

Time integrals are evaluated by Gauss-Legendre quadrature in the
integrated-rate clock ``u = fbar(t)``.  There ``Q_t dt = (F_t - I) du``, so the
integrands stay bounded on the whole horizon and no clipping near ``t = 1`` is
needed.  Panels are split wherever the model's predictions jump in time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .kernels import AbsorbKernel, JumpKernel
from .oracle import conditional_reverse, transition_grid
from .schedules import Schedule

__all__ = [
    "snapshot_loss",
    "campbell_terms",
    "campbell_loss",
    "pathwise_loss_quadrature",
    "pathwise_integrand",
    "mdm_loss",
    "bin_posterior",
    "expected_snapshot_gradient",
    "ExactJumpNet",
    "GapReport",
    "nll_gap_report",
    "QuadratureMismatch",
]


class QuadratureMismatch(RuntimeError):
    pass


def _neg_log(p, weight):
    """``weight * -log p`` with ``0 * inf = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(weight > 0, -weight * np.log(np.where(weight > 0, p, 1.0)), 0.0)


def snapshot_loss(model, x0, x_t, t):
    """Mean ``-log mu(x_t, t)[x0]`` and its gradient w.r.t. the logit table."""
    x0, x_t = np.atleast_1d(x0), np.atleast_1d(x_t)
    n = len(x0)
    p = model.predict(x_t, t)
    with np.errstate(divide="ignore"):
        loss = float(-np.log(p[np.arange(n), x0]).mean())
    g = p.copy()
    g[np.arange(n), x0] -= 1.0
    grad = np.zeros_like(model.logits)
    np.add.at(grad, (x_t, np.broadcast_to(model.bin_of(t), x_t.shape)), g / n)
    return loss, grad


def campbell_terms(model, paths) -> np.ndarray:
    """Per-path sums of ``-log j(z_k, T_k)[z_{k-1}]`` over non-self jumps."""
    prev = paths.previous_states()
    real = paths.states != prev
    owner = paths.owners()[real]
    p = model.predict(paths.states[real], paths.times[real])
    with np.errstate(divide="ignore"):
        nll = -np.log(p[np.arange(len(owner)), prev[real]])
    return np.bincount(owner, weights=nll, minlength=len(paths))


def campbell_loss(model, paths):
    """Mean Campbell loss over paths and, for tabular models, its gradient."""
    terms = campbell_terms(model, paths)
    loss = float(terms.mean())
    if not hasattr(model, "logits"):
        return loss, None
    prev = paths.previous_states()
    real = paths.states != prev
    z, T = paths.states[real], paths.times[real]
    g = model.predict(z, T)
    g[np.arange(len(z)), prev[real]] -= 1.0
    grad = np.zeros_like(model.logits)
    np.add.at(grad, (z, model.bin_of(T)), g / len(paths))
    return loss, grad


def _u_panels(sched, breakpoints, nodes):
    """Gauss-Legendre nodes and weights in the u clock, split at ``breakpoints`` (times)."""
    top = float(sched.integrated_rate(1.0))
    bp = np.asarray(breakpoints, dtype=np.float64)
    edges = np.unique(np.concatenate([[0.0, top], np.asarray(sched.integrated_rate(bp)).ravel()]))
    edges = edges[edges <= top]
    x, w = np.polynomial.legendre.leggauss(nodes)
    us, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            us.append(0.5 * (b - a) * x + 0.5 * (a + b))
            ws.append(0.5 * (b - a) * w)
    u = np.concatenate(us)
    return u, np.concatenate(ws), np.atleast_1d(sched.inverse_integrated_rate(u))


def _jump_table(model, m, t):
    """``J[x, y] = j(x, t)_y``."""
    return model.predict(np.arange(m), t)


def pathwise_integrand(model, kern, sched, x0, t, K=None, form=1):
    """Integrand of the path-wise loss per unit integrated rate at time ``t``."""
    m = kern.m
    K = transition_grid(kern, sched, [t])[0] if K is None else K
    q = K[:, x0]
    J = _jump_table(model, m, t)
    if form == 1:
        F = kern.matrix(t)
        # weight[x, y] = q(y) F(x, y) for y != x
        weight = F * q[None, :]
        np.fill_diagonal(weight, 0.0)
        return float(_neg_log(J, weight).sum())
    R, r = conditional_reverse(kern, sched, x0, t, K)
    f = sched.exit_rate(t)
    # CE(R(., x), j(x, t)) weighted by q(x) r_x, with r per unit rate
    weight = (R * (q * r / f)[None, :]).T
    return float(_neg_log(J, weight).sum())


def pathwise_loss_quadrature(model, kern: JumpKernel, sched: Schedule, x0: int, nodes: int = 64,
                             check_tol: float = 1e-6, return_both: bool = False):
    """Path-wise loss for clean token ``x0`` by quadrature of the exact expectation.

    Two algebraic forms are integrated: the forward-jump form
    ``sum_x sum_{y != x} q_t(y|x0) Q_t(x, y) (-log j(x, t)_y)`` and the reverse form
    ``sum_x q_t(x|x0) r_x CE(R(., x), j(x, t))``.  They must agree within
    ``check_tol``.
    """
    u, w, t = _u_panels(sched, getattr(model, "breakpoints", ()), nodes)
    Ks = transition_grid(kern, sched, t)
    v1 = sum(wi * pathwise_integrand(model, kern, sched, x0, ti, K, 1) for wi, ti, K in zip(w, t, Ks))
    v2 = sum(wi * pathwise_integrand(model, kern, sched, x0, ti, K, 2) for wi, ti, K in zip(w, t, Ks))
    if abs(v1 - v2) > check_tol * max(1.0, abs(v1)):
        raise QuadratureMismatch(f"path-wise forms disagree: {v1!r} vs {v2!r}")
    return (v1, v2) if return_both else v1


class ExactJumpNet:
    """Jump predictor equal to the conditional reverse kernel of a fixed clean token."""

    def __init__(self, kern, sched, x0):
        self.kern, self.sched, self.x0 = kern, sched, x0
        self.breakpoints = np.empty(0)

    def predict(self, x, t):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(x)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape)
        out = np.empty((len(x), self.kern.m))
        for tv in np.unique(t):
            R, r = conditional_reverse(self.kern, self.sched, self.x0, float(tv))
            # unsupported columns get a uniform guess; they carry zero weight
            R[:, r <= 0] = 1.0 / self.kern.m
            sel = t == tv
            out[sel] = R[:, x[sel]].T
        return out[0] if scalar else out


def mdm_loss(model, sched: Schedule, x0: int, mask_id: int) -> float:
    """Masked-diffusion closed form ``int (-alpha'/(1 - alpha)) (1 - alpha) (-log mu(MASK, t)[x0]) dt``."""
    def integrand(t):
        a = sched.alpha(t)
        rate = -sched.alpha_dot(t) / (1.0 - a)
        return rate * (1.0 - a) * -np.log(model.predict(mask_id, t)[x0])

    pts = np.asarray(getattr(model, "breakpoints", ()), dtype=np.float64)
    val, _ = integrate.quad(integrand, 0.0, 1.0, points=pts if len(pts) else None,
                            epsabs=1e-13, epsrel=1e-13, limit=max(200, 4 * len(pts) + 50))
    return float(val)


def bin_posterior(kern: JumpKernel, sched: Schedule, qdata, bins: int, nodes: int = 16):
    """Per-bin joint mass ``A[x, b, x0] = int_bin q_data(x0) K_t(x, x0) dt`` and its normaliser.

    Returns
    -------
    (post, mass)
        ``post = A / mass`` is the minimiser of the snapshot loss over a tabular
        model; ``mass[x, b]`` is the time-integrated snapshot probability.
    """
    qdata = np.asarray(qdata, dtype=np.float64)
    m = kern.m
    x, w = np.polynomial.legendre.leggauss(nodes)
    A = np.zeros((m, bins, m))
    for b in range(bins):
        lo, hi = b / bins, (b + 1) / bins
        ts = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        Ks = transition_grid(kern, sched, ts)
        A[:, b, :] = np.einsum("n,nxy,y->xy", 0.5 * (hi - lo) * w, Ks, qdata)
    mass = A.sum(axis=2)
    post = np.divide(A, mass[..., None], out=np.full_like(A, 1.0 / m), where=mass[..., None] > 0)
    return post, mass


def expected_snapshot_gradient(model, kern: JumpKernel, sched: Schedule, qdata, nodes: int = 16,
                               cache=None) -> np.ndarray:
    """Population gradient of the snapshot loss with ``t ~ U[0, 1]``, ``x0 ~ q_data``."""
    post, mass = cache if cache is not None else bin_posterior(kern, sched, qdata, model.bins, nodes)
    mu = softmax_table(model)
    return mass[..., None] * (mu - post)


def softmax_table(model):
    z = model.logits - model.logits.max(axis=2, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=2, keepdims=True)


@dataclass
class GapReport:
    delta_nll: float
    ipg: float
    cg: float
    cal_snapshot: float
    cal_path: float
    h_snapshot: float
    h_path: float
    nll_snapshot: float
    nll_path: float

    @property
    def residual(self) -> float:
        return self.delta_nll - self.ipg - self.cg

    def to_dict(self):
        return asdict(self)


def _kl(p, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0).sum(axis=-1)


def _entropy(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum(axis=-1)


def nll_gap_report(kern: JumpKernel, sched: Schedule, qdata, model_snap, model_path,
                   nodes: int = 64) -> GapReport:
    """Exact NLL gap between snapshot and path predictors on the absorbing kernel.

    A masked path is summarised by the token it held before masking and the
    masking time (or the absence of a jump).  ``model_snap.predict(x_t, t)``
    and ``model_path.predict(z0, T or None)`` return distributions over clean
    tokens.  Every term is integrated with the same Gauss-Legendre rule in
    ``t``, so ``delta_nll = ipg + cg`` holds to rounding.
    """
    if not isinstance(kern, AbsorbKernel):
        raise NotImplementedError("the gap report needs the absorbing kernel")
    q = np.asarray(qdata, dtype=np.float64)
    m, mask = kern.m, kern.mask_id
    eye = np.eye(m)
    F = kern.matrix(0.0)
    bps = [getattr(model_snap, "breakpoints", ()), getattr(model_path, "breakpoints", ())]
    # the masking density -alpha' can kink where alpha reaches its floor
    t_end = float(sched.inverse_integrated_rate(sched.integrated_rate(1.0)))
    edges = np.unique(np.concatenate([[0.0, 1.0, t_end]] + [np.ravel(b) for b in bps]))
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    nll_s = nll_p = h_s = cal_s = cal_p = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        for ti, wi in zip(0.5 * (b - a) * gx + 0.5 * (a + b), 0.5 * (b - a) * gw):
            al = sched.alpha(ti)
            K = al * eye + (1.0 - al) * F
            joint = K * q[None, :]              # joint[x_t, x0]
            qt = joint.sum(axis=1)
            live = qt > 0
            post = joint[live] / qt[live, None]
            ps = model_snap.predict(np.arange(m), ti)
            nll_s += wi * float(_neg_log(ps, joint).sum())
            h_s += wi * float((qt[live] * _entropy(post)).sum())
            cal_s += wi * float((qt[live] * _kl(post, ps[live])).sum())
            dens = -sched.alpha_dot(ti)
            pp = model_path.predict(np.arange(m), ti)
            nll_p += wi * dens * float(_neg_log(pp, np.diag(q)).sum())
            cal_p += wi * dens * float((q * _kl(eye, pp)).sum())
    a1 = sched.alpha(1.0)
    pp = model_path.predict(np.arange(m), None)
    nll_p += a1 * float(_neg_log(pp, np.diag(q)).sum())
    cal_p += a1 * float((q * _kl(eye, pp)).sum())
    # the pre-mask token is the clean token, so the path posterior is a point mass
    h_p = 0.0
    return GapReport(delta_nll=nll_s - nll_p, ipg=h_s - h_p, cg=cal_s - cal_p,
                     cal_snapshot=cal_s, cal_path=cal_p, h_snapshot=h_s, h_path=h_p,
                     nll_snapshot=nll_s, nll_path=nll_p)
