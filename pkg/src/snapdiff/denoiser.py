"""Tabular denoisers and their training loop.

A :class:`TabularDenoiser` stores logits indexed by (input token, time bin,
output token).  With role ``"mean"`` it predicts the clean token from a
snapshot; with role ``"jump"`` it predicts the state a reverse jump lands on.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "TabularDenoiser",
    "SmoothJumpNet",
    "PathPredictor",
    "TrainConfig",
    "TrainingDiverged",
    "softmax",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

ROLES = ("mean", "jump")
_MAGIC = b"TDN1"


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class TabularDenoiser:
    """Logit table ``m x B x m``; time ``t`` maps to bin ``floor(t B)`` clamped to ``B - 1``."""

    def __init__(self, m: int, bins: int = 32, role: str = "mean", logits=None):
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        self.m, self.bins, self.role = int(m), int(bins), role
        if logits is None:
            logits = np.zeros((self.m, self.bins, self.m))
        logits = np.array(logits, dtype=np.float64)
        if logits.shape != (self.m, self.bins, self.m):
            raise ValueError(f"logits must have shape {(self.m, self.bins, self.m)}")
        self.logits = logits

    def bin_of(self, t):
        return np.clip((np.asarray(t, dtype=np.float64) * self.bins).astype(np.int64), 0, self.bins - 1)

    @property
    def breakpoints(self) -> np.ndarray:
        """Interior bin edges, where predictions jump in time."""
        return np.arange(1, self.bins) / self.bins

    def predict(self, x, t) -> np.ndarray:
        """Distribution over output tokens for token(s) ``x`` at time(s) ``t``."""
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(x)
        b = np.broadcast_to(self.bin_of(t), x.shape)
        out = softmax(self.logits[x, b])
        return out[0] if scalar else out

    __call__ = predict

    @classmethod
    def from_probs(cls, probs, role="mean"):
        """Model whose predictions equal ``probs`` (shape ``m x B x m``)."""
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logits = np.log(probs)
        return cls(probs.shape[0], probs.shape[1], role, logits)

    def copy(self):
        return TabularDenoiser(self.m, self.bins, self.role, self.logits.copy())


class SmoothJumpNet:
    """Random jump predictor with logits linear in time: ``softmax(A[x] + t B[x])``."""

    role = "jump"
    breakpoints = np.empty(0)

    def __init__(self, m: int, seed: int = 0, scale: float = 1.0):
        rng = np.random.default_rng(seed)
        self.m = m
        self.a = scale * rng.standard_normal((m, m))
        self.b = scale * rng.standard_normal((m, m))

    def predict(self, x, t):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(x)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape)[:, None]
        out = softmax(self.a[x] + t * self.b[x])
        return out[0] if scalar else out

    __call__ = predict


class PathPredictor:
    """Clean-token predictor from a masked path summary.

    Input is the token before masking and the masking time, or ``None`` for
    paths that never jump.  Logits are tabulated over ``bins`` time bins.
    """

    def __init__(self, m: int, bins: int = 32, seed: int | None = None, scale: float = 1.0):
        self.m, self.bins = m, bins
        rng = np.random.default_rng(seed)
        shape_jump, shape_stay = (m, bins, m), (m, m)
        if seed is None:
            self.jump_logits, self.stay_logits = np.zeros(shape_jump), np.zeros(shape_stay)
        else:
            self.jump_logits = scale * rng.standard_normal(shape_jump)
            self.stay_logits = scale * rng.standard_normal(shape_stay)

    @property
    def breakpoints(self):
        return np.arange(1, self.bins) / self.bins

    @classmethod
    def exact(cls, m, bins=32):
        """The Bayes predictor: the pre-mask token is the clean token."""
        p = cls(m, bins)
        eye = np.where(np.eye(m) > 0, 0.0, -np.inf)
        p.jump_logits = np.repeat(eye[:, None, :], bins, axis=1)
        p.stay_logits = eye.copy()
        return p

    def predict(self, z0, t):
        z0 = np.atleast_1d(z0)
        if t is None:
            return softmax(self.stay_logits[z0])
        b = np.clip((np.asarray(t) * self.bins).astype(np.int64), 0, self.bins - 1)
        return softmax(self.jump_logits[z0, np.broadcast_to(b, z0.shape)])

    __call__ = predict


@dataclass
class TrainConfig:
    lr: float = 0.1
    steps: int = 10000
    batch_size: int = 256
    optimizer: str = "adam"
    seed: int = 0
    bins: int = 32
    momentum: float = 0.9
    beta2: float = 0.999
    lr_decay: str = "constant"
    log_every: int = 100

    def __post_init__(self):
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if self.lr < 0 or self.steps < 0 or self.batch_size < 1 or self.bins < 1 or self.log_every < 1:
            raise ValueError("training hyperparameters must be positive")

    def to_dict(self):
        return asdict(self)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class _Optimizer:
    cfg: TrainConfig
    shape: tuple
    m1: np.ndarray = field(init=False)
    m2: np.ndarray = field(init=False)
    k: int = 0

    def __post_init__(self):
        self.m1 = np.zeros(self.shape)
        self.m2 = np.zeros(self.shape)

    def lr(self):
        c = self.cfg
        frac = self.k / max(c.steps, 1)
        if c.lr_decay == "linear":
            return c.lr * (1.0 - frac)
        if c.lr_decay == "cosine":
            return c.lr * 0.5 * (1.0 + np.cos(np.pi * frac))
        return c.lr

    def step(self, params, grad):
        c = self.cfg
        lr = self.lr()
        self.k += 1
        if c.optimizer == "sgd":
            params -= lr * grad
        elif c.optimizer == "momentum":
            self.m1 = c.momentum * self.m1 + grad
            params -= lr * self.m1
        else:
            b1, b2 = c.momentum, c.beta2
            self.m1 = b1 * self.m1 + (1 - b1) * grad
            self.m2 = b2 * self.m2 + (1 - b2) * grad * grad
            mh = self.m1 / (1 - b1 ** self.k)
            vh = self.m2 / (1 - b2 ** self.k)
            params -= lr * mh / (np.sqrt(vh) + 1e-12)


def _draw_clean(source, n, rng):
    """Clean tokens from a probability vector or a flat token array."""
    source = np.asarray(source)
    if source.dtype.kind == "f":
        return rng.choice(len(source), size=n, p=source)
    return source[rng.integers(0, len(source), size=n)]


def train(model: TabularDenoiser, objective: str, kern, sched, data, cfg: TrainConfig,
          log=None, workers: int = 1):
    """Minimise the snapshot or Campbell loss with minibatch gradient steps.

    Parameters
    ----------
    objective : {"snapshot", "campbell"}
    data : probability vector over tokens or array of clean tokens
    log : callable taking one dict per logged step, optional
    workers : int
        Noising threads; results do not depend on it.

    Returns
    -------
    (model, history) where history holds the logged dicts.
    """
    from .objectives import campbell_loss, snapshot_loss
    from .uniformize import noise_batch

    if objective not in ("snapshot", "campbell"):
        raise ValueError(f"unknown objective {objective!r}")
    rng = np.random.default_rng(cfg.seed)
    opt = _Optimizer(cfg, model.logits.shape)
    history = []
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        x0 = _draw_clean(data, cfg.batch_size, rng)
        seed = int(rng.integers(2**63))
        if objective == "snapshot":
            t = rng.random(cfg.batch_size)
            xt, _ = noise_batch(kern, sched, x0, t, seed, record=False, workers=workers)
            loss, grad = snapshot_loss(model, x0, xt, t)
        else:
            _, paths = noise_batch(kern, sched, x0, 1.0, seed, record=True, workers=workers)
            loss, grad = campbell_loss(model, paths)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"non-finite loss at step {step}: loss={loss}, "
                                   f"max |logit|={np.abs(model.logits).max():.3e}")
        opt.step(model.logits, grad)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            rec = {"step": step, "loss": float(loss), "grad_norm": float(np.linalg.norm(grad)),
                   "wall_ms": 1e3 * (time.perf_counter() - t0)}
            history.append(rec)
            if log is not None:
                log(rec)
    return model, history


def save_checkpoint(path, model: TabularDenoiser) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IIB", model.m, model.bins, ROLES.index(model.role)))
        fh.write(model.logits.astype("<f4").tobytes())


def load_checkpoint(path) -> TabularDenoiser:
    with open(path, "rb") as fh:
        head = fh.read(13)
        if len(head) != 13 or head[:4] != _MAGIC:
            raise ValueError(f"{path}: not a TDN1 checkpoint")
        m, bins, role = struct.unpack("<IIB", head[4:])
        if role >= len(ROLES):
            raise ValueError(f"{path}: unknown role byte {role}")
        raw = fh.read()
    if len(raw) != 4 * m * bins * m:
        raise ValueError(f"{path}: truncated logit table")
    logits = np.frombuffer(raw, dtype="<f4").reshape(m, bins, m).astype(np.float64)
    return TabularDenoiser(m, bins, ROLES[role], logits)


def history_jsonl(history) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in history)
