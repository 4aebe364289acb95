"""Noise schedules on the unit time horizon.

A schedule fixes the mixing rate ``alpha(t)`` (probability that no jump has
happened by time ``t``), the exit rate ``f(t) = -alpha'(t) / alpha(t)`` and the
integrated rate ``fbar(t) = -log alpha(t)``.  All three are vectorised over
``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Schedule",
    "LogLinear",
    "Linear",
    "Custom",
    "ScheduleDomainError",
    "ScheduleSingularityError",
    "alpha",
    "integrated_rate",
    "exit_rate",
    "schedule_from_dict",
]


class ScheduleDomainError(ValueError):
    pass


class ScheduleSingularityError(ArithmeticError):
    pass


def _check_domain(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ScheduleDomainError(f"time outside [0, 1]: {t}")
    return t


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


class Schedule:
    """Base class; subclasses implement the ``_log_alpha`` family."""

    def alpha(self, t):
        t = _check_domain(t)
        return _out(np.exp(self._log_alpha(t)), t)

    def integrated_rate(self, t):
        t = _check_domain(t)
        return _out(-self._log_alpha(t), t)

    def exit_rate(self, t):
        t = _check_domain(t)
        return _out(self._exit_rate(t), t)

    def alpha_dot(self, t):
        """Time derivative of ``alpha``."""
        t = _check_domain(t)
        return _out(-self._exit_rate(t) * np.exp(self._log_alpha(t)), t)

    def alpha_ratio(self, t, s):
        """``alpha(t) / alpha(s)`` for ``s <= t``, computed in log space."""
        t = _check_domain(t)
        s = _check_domain(s)
        return _out(np.exp(self._log_alpha(t) - self._log_alpha(s)), t)

    def inverse_integrated_rate(self, v):
        """Smallest ``t`` with ``fbar(t) = v``; ``v`` must lie in ``[0, fbar(1)]``."""
        v = np.asarray(v, dtype=np.float64)
        top = -float(self._log_alpha(np.float64(1.0)))
        if np.any(v < 0) or np.any(v > top * (1 + 1e-12) + 1e-300):
            raise ScheduleDomainError("integrated rate outside the schedule's range")
        return _out(np.clip(self._inverse(np.minimum(v, top)), 0.0, 1.0), v)

    # numerical fallback, overridden where a closed form exists
    def _inverse(self, v):
        v = np.asarray(v, dtype=np.float64)
        lo = np.zeros_like(v)
        hi = np.ones_like(v)
        # 60 halvings of [0, 1] is below 1e-12 absolute
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = -self._log_alpha(mid) < v
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return hi

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LogLinear(Schedule):
    """``alpha(t) = 1 - (1 - eps) t``; ``alpha(1) = eps`` keeps every rate finite."""

    eps: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")

    def _log_alpha(self, t):
        return np.log1p(-(1.0 - self.eps) * t)

    def _exit_rate(self, t):
        return (1.0 - self.eps) / (1.0 - (1.0 - self.eps) * t)

    def _inverse(self, v):
        return -np.expm1(-v) / (1.0 - self.eps)

    def to_dict(self):
        return {"kind": "loglinear", "eps": self.eps}


@dataclass(frozen=True)
class Linear(Schedule):
    """``alpha(t) = max(1 - t, floor)``.

    With ``floor = 0`` the terminal rate diverges and ``exit_rate(1)`` raises.
    """

    floor: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.floor < 1.0:
            raise ValueError("floor must lie in [0, 1)")

    def _log_alpha(self, t):
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(1.0 - t, self.floor))

    def _exit_rate(self, t):
        a = 1.0 - t
        if np.any((a <= 0.0) & (self.floor == 0.0)):
            raise ScheduleSingularityError("exit rate diverges where alpha = 0")
        with np.errstate(divide="ignore"):
            return np.where(a > self.floor, 1.0 / np.where(a > 0, a, 1.0), 0.0)

    def _inverse(self, v):
        return -np.expm1(-v)

    def to_dict(self):
        return {"kind": "linear", "floor": self.floor}


@dataclass(frozen=True)
class Custom(Schedule):
    """Tabulated mixing rate.

    ``alpha_values`` are given on a uniform grid over ``[0, 1]`` and are
    resampled onto ``grid_size`` points; ``log alpha`` is interpolated
    linearly, so ``exp(-fbar) == alpha`` holds to rounding.
    """

    alpha_values: tuple
    grid_size: int = 1024
    _grid: np.ndarray = field(init=False, repr=False, compare=False)
    _log_table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.alpha_values, dtype=np.float64)
        if vals.ndim != 1 or len(vals) < 2:
            raise ValueError("need at least two tabulated values")
        if abs(vals[0] - 1.0) > 1e-12:
            raise ValueError("alpha(0) must equal 1")
        if np.any(np.diff(vals) > 0) or np.any(vals <= 0):
            raise ValueError("tabulated alpha must be non-increasing and positive")
        src = np.linspace(0.0, 1.0, len(vals))
        grid = np.linspace(0.0, 1.0, self.grid_size)
        log_tab = np.interp(grid, src, np.log(vals))
        log_tab[0] = 0.0
        object.__setattr__(self, "alpha_values", tuple(float(v) for v in vals))
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_log_table", log_tab)

    def _log_alpha(self, t):
        return np.interp(t, self._grid, self._log_table)

    def _exit_rate(self, t):
        h = 1e-6
        lo = np.clip(t - h, 0.0, 1.0)
        hi = np.clip(t + h, 0.0, 1.0)
        return -(self._log_alpha(hi) - self._log_alpha(lo)) / (hi - lo)

    def to_dict(self):
        return {"kind": "custom", "alpha": list(self.alpha_values), "grid_size": self.grid_size}


def alpha(sched: Schedule, t):
    return sched.alpha(t)


def integrated_rate(sched: Schedule, t):
    return sched.integrated_rate(t)


def exit_rate(sched: Schedule, t):
    return sched.exit_rate(t)


def schedule_from_dict(spec: dict) -> Schedule:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "loglinear":
            return LogLinear(**spec)
        if kind == "linear":
            return Linear(**spec)
        if kind == "custom":
            values = spec.pop("alpha")
            return Custom(tuple(values), **spec)
    except TypeError as exc:
        raise ValueError(f"bad schedule spec: {exc}") from None
    raise ValueError(f"unknown schedule kind {kind!r}")
