import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snapdiff.schedules import (Custom, Linear, LogLinear, ScheduleDomainError, ScheduleSingularityError,
                                alpha, exit_rate, integrated_rate, schedule_from_dict)

SCHEDULES = [LogLinear(), LogLinear(0.05), Linear(), Linear(0.01),
             Custom(tuple(np.exp(-3.0 * np.linspace(0, 1, 50) ** 1.5)))]


class TestExamples:
    def test_loglinear_start(self):
        assert alpha(LogLinear(1e-3), 0.0) == 1.0

    def test_linear_midpoint(self):
        assert alpha(Linear(), 0.5) == pytest.approx(0.5, abs=1e-15)

    def test_loglinear_end(self):
        np.testing.assert_allclose(alpha(LogLinear(1e-3), 1.0), 1e-3, rtol=1e-12)

    def test_integrated_rate_examples(self):
        assert integrated_rate(LogLinear(), 0.0) == 0.0
        np.testing.assert_allclose(integrated_rate(Linear(), 0.5), math.log(2), rtol=1e-14)

    def test_exit_rate_examples(self):
        np.testing.assert_allclose(exit_rate(Linear(), 0.5), 2.0, rtol=1e-14)
        np.testing.assert_allclose(exit_rate(Linear(), 0.0), 1.0, rtol=1e-14)

    def test_linear_floor_integrated_rate(self):
        np.testing.assert_allclose(Linear(1e-3).integrated_rate(1.0), -math.log(1e-3), rtol=1e-12)

    @pytest.mark.parametrize("sched", SCHEDULES, ids=repr)
    def test_round_trip_grid(self, sched):
        t = np.linspace(0, 1, 100)
        np.testing.assert_allclose(np.exp(-sched.integrated_rate(t)), sched.alpha(t), rtol=1e-12, atol=0)

    @pytest.mark.parametrize("sched", SCHEDULES[:4], ids=repr)
    def test_exit_rate_matches_finite_difference(self, sched):
        t = np.linspace(0.05, 0.95, 19)
        h = 1e-5
        fd = -(sched.alpha(t + h) - sched.alpha(t - h)) / (2 * h)
        np.testing.assert_allclose(sched.exit_rate(t) * sched.alpha(t), fd, rtol=1e-6)


class TestInvariants:
    @pytest.mark.parametrize("sched", SCHEDULES, ids=repr)
    def test_monotone(self, sched):
        t = np.linspace(0, 1, 513)
        a = sched.alpha(t)
        assert np.all(np.diff(a) <= 0)
        assert np.all(np.diff(sched.integrated_rate(t)) >= 0)
        assert np.all(sched.exit_rate(t[1:-1]) >= 0)
        assert a[0] == 1.0

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_alpha_ratio_in_unit_interval(self, a, b):
        s, t = min(a, b), max(a, b)
        for sched in SCHEDULES:
            r = sched.alpha_ratio(t, s)
            assert 0 < r <= 1 + 1e-15

    @given(st.floats(0, 1))
    def test_inverse_integrated_rate(self, t):
        for sched in SCHEDULES[:4]:
            v = sched.integrated_rate(t)
            np.testing.assert_allclose(sched.integrated_rate(sched.inverse_integrated_rate(v)), v,
                                       rtol=1e-9, atol=1e-12)

    @given(st.floats(0, 1).filter(lambda x: 0 < x < 1))
    def test_alpha_dot_consistent(self, t):
        for sched in SCHEDULES[:2]:
            np.testing.assert_allclose(sched.alpha_dot(t), -sched.exit_rate(t) * sched.alpha(t), rtol=1e-12)


class TestErrors:
    @pytest.mark.parametrize("t", [-0.1, 1.5, float("nan")])
    def test_domain(self, t):
        with pytest.raises(ScheduleDomainError):
            LogLinear().alpha(t)

    def test_singularity(self):
        with pytest.raises(ScheduleSingularityError):
            Linear(0.0).exit_rate(1.0)

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            LogLinear(0.0)
        with pytest.raises(ValueError):
            Custom((0.5, 0.2))
        with pytest.raises(ValueError):
            Custom((1.0, 0.5, 0.7))


class TestSerialisation:
    @pytest.mark.parametrize("sched", SCHEDULES, ids=repr)
    def test_round_trip(self, sched):
        back = schedule_from_dict(sched.to_dict())
        t = np.linspace(0, 1, 33)
        np.testing.assert_array_equal(back.alpha(t), sched.alpha(t))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            schedule_from_dict({"kind": "cosine"})
        with pytest.raises(ValueError):
            schedule_from_dict({"kind": "loglinear", "bogus": 1})
