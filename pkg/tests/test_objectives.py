import numpy as np
import pytest
from scipy import integrate

from snapdiff.denoiser import PathPredictor, SmoothJumpNet, TabularDenoiser
from snapdiff.kernels import AbsorbKernel, UniformKernel, random_dense_kernel
from snapdiff.objectives import (ExactJumpNet, QuadratureMismatch, bin_posterior, campbell_loss, campbell_terms,
                                 expected_snapshot_gradient, mdm_loss, nll_gap_report, pathwise_integrand,
                                 pathwise_loss_quadrature, snapshot_loss)
from snapdiff.oracle import conditional_reverse, transition
from snapdiff.schedules import Linear, LogLinear
from snapdiff.uniformize import noise_batch

SCHED = LogLinear()


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


class TestSnapshotLoss:
    def test_perfect_denoiser_zero(self):
        probs = np.zeros((4, 2, 4))
        probs[..., 2] = 1.0
        model = TabularDenoiser.from_probs(probs)
        loss, _ = snapshot_loss(model, np.full(10, 2), np.arange(10) % 4, np.linspace(0, 1, 10))
        assert loss == 0.0

    def test_uniform_log_m(self):
        loss, _ = snapshot_loss(TabularDenoiser(5, 3), np.arange(5), np.arange(5)[::-1], np.full(5, 0.3))
        np.testing.assert_allclose(loss, np.log(5), rtol=1e-14)

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(0)
        model = TabularDenoiser(5, 3, logits=rng.standard_normal((5, 3, 5)))
        x0, xt, t = rng.integers(0, 5, 40), rng.integers(0, 5, 40), rng.random(40)
        _, grad = snapshot_loss(model, x0, xt, t)
        h = 1e-6
        for idx in zip(*[rng.integers(0, s, 100) for s in model.logits.shape]):
            plus, minus = model.copy(), model.copy()
            plus.logits[idx] += h
            minus.logits[idx] -= h
            fd = (snapshot_loss(plus, x0, xt, t)[0] - snapshot_loss(minus, x0, xt, t)[0]) / (2 * h)
            assert abs(fd - grad[idx]) <= 1e-5 * max(abs(fd), 1e-3)

    def test_gradient_vanishes_at_bin_posterior(self):
        kern = random_dense_kernel(4, 2, time_dependent=True)
        q = np.array([0.1, 0.2, 0.3, 0.4])
        post, mass = bin_posterior(kern, SCHED, q, 8)
        model = TabularDenoiser.from_probs(post)
        g = expected_snapshot_gradient(model, kern, SCHED, q, cache=(post, mass))
        assert np.abs(g).max() < 1e-8
        other = TabularDenoiser(4, 8)
        assert np.abs(expected_snapshot_gradient(other, kern, SCHED, q, cache=(post, mass))).max() > 1e-3

    def test_population_gradient_matches_monte_carlo(self):
        kern, q = UniformKernel(3), np.array([0.5, 0.3, 0.2])
        model = TabularDenoiser(3, 2, logits=np.random.default_rng(1).standard_normal((3, 2, 3)))
        n = 4 * 10**5
        rng = np.random.default_rng(2)
        x0 = rng.choice(3, n, p=q)
        t = rng.random(n)
        xt, _ = noise_batch(kern, SCHED, x0, t, 3, record=False)
        _, g = snapshot_loss(model, x0, xt, t)
        np.testing.assert_allclose(g, expected_snapshot_gradient(model, kern, SCHED, q), atol=5e-3)


class TestPathwise:
    @pytest.mark.parametrize("seed", range(3))
    def test_two_forms_agree(self, seed):
        kern = random_dense_kernel(4, seed, time_dependent=True)
        v1, v2 = pathwise_loss_quadrature(SmoothJumpNet(4, seed), kern, SCHED, 1, return_both=True)
        np.testing.assert_allclose(v1, v2, rtol=1e-8)

    def test_entropy_floor_at_exact_kernel(self):
        kern, x0 = random_dense_kernel(4, 5), 2
        exact = pathwise_loss_quadrature(ExactJumpNet(kern, SCHED, x0), kern, SCHED, x0)

        def floor_per_rate(u):
            t = float(SCHED.inverse_integrated_rate(u))
            R, r = conditional_reverse(kern, SCHED, x0, t)
            q = transition(kern, SCHED, 0.0, t)[:, x0]
            return sum(q[x] * r[x] * _entropy(R[:, x]) for x in range(4) if r[x] > 0) / SCHED.exit_rate(t)

        ref, _ = integrate.quad(floor_per_rate, 0, float(SCHED.integrated_rate(1.0)), epsabs=1e-11,
                                epsrel=1e-11, limit=200)
        np.testing.assert_allclose(exact, ref, rtol=1e-6)
        other = pathwise_loss_quadrature(SmoothJumpNet(4, 0), kern, SCHED, x0)
        assert other > exact > 0

    def test_mdm_specialisation(self):
        kern = AbsorbKernel(5)
        probs = np.random.default_rng(3).dirichlet(np.ones(5), size=(5, 8))
        model = TabularDenoiser.from_probs(probs, role="jump")
        for sched in (LogLinear(), Linear(0.01)):
            for x0 in range(4):
                np.testing.assert_allclose(pathwise_loss_quadrature(model, kern, sched, x0),
                                           mdm_loss(model, sched, x0, 4), rtol=1e-6, atol=1e-10)

    def test_quadrature_converges(self):
        kern = random_dense_kernel(4, 1, time_dependent=True)
        net = SmoothJumpNet(4, 1)
        np.testing.assert_allclose(pathwise_loss_quadrature(net, kern, SCHED, 0, nodes=16),
                                   pathwise_loss_quadrature(net, kern, SCHED, 0, nodes=64), rtol=1e-9)

    def test_mismatch_raises(self, monkeypatch):
        import snapdiff.objectives as obj
        real = obj.pathwise_integrand
        monkeypatch.setattr(obj, "pathwise_integrand",
                            lambda *a, **k: real(*a, **k) * (1.01 if a[-1] == 2 else 1.0))
        with pytest.raises(QuadratureMismatch):
            pathwise_loss_quadrature(SmoothJumpNet(3, 0), random_dense_kernel(3, 0), SCHED, 0, nodes=4)

    def test_integrand_nonnegative(self):
        kern = random_dense_kernel(4, 3, time_dependent=True)
        for t in (0.1, 0.5, 0.9):
            assert pathwise_integrand(SmoothJumpNet(4, 0), kern, SCHED, 1, t) >= 0


class TestCampbell:
    def test_empty_path_zero(self):
        _, paths = noise_batch(UniformKernel(4), SCHED, np.arange(4), 0.0, 0)
        np.testing.assert_array_equal(campbell_terms(SmoothJumpNet(4, 0), paths), 0.0)

    def test_self_jumps_skipped(self):
        _, paths = noise_batch(UniformKernel(2), SCHED, np.zeros(2000, dtype=np.int64), 1.0, 1)
        real = (paths.states != paths.previous_states()).sum()
        terms = campbell_terms(TabularDenoiser(2, 1, "jump"), paths)
        np.testing.assert_allclose(terms.sum(), real * np.log(2))

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(0)
        model = TabularDenoiser(4, 3, "jump", rng.standard_normal((4, 3, 4)))
        _, paths = noise_batch(random_dense_kernel(4, 0), SCHED, rng.integers(0, 4, 50), 1.0, 2)
        _, grad = campbell_loss(model, paths)
        h = 1e-6
        for idx in zip(*[rng.integers(0, s, 100) for s in model.logits.shape]):
            plus, minus = model.copy(), model.copy()
            plus.logits[idx] += h
            minus.logits[idx] -= h
            fd = (campbell_loss(plus, paths)[0] - campbell_loss(minus, paths)[0]) / (2 * h)
            assert abs(fd - grad[idx]) <= 1e-5 * max(abs(fd), 1e-3)

    def test_masked_matches_mdm(self):
        kern, x0 = AbsorbKernel(4), 1
        probs = np.random.default_rng(4).dirichlet(np.ones(4), size=(4, 4))
        model = TabularDenoiser.from_probs(probs, role="jump")
        _, paths = noise_batch(kern, SCHED, np.full(10**5, x0), 1.0, 5)
        terms = campbell_terms(model, paths)
        se = terms.std(ddof=1) / np.sqrt(len(terms))
        assert abs(terms.mean() - mdm_loss(model, SCHED, x0, 3)) < 3 * se

    def test_unbiased_regression(self):
        kern, x0 = random_dense_kernel(4, 6, time_dependent=True), 0
        net = SmoothJumpNet(4, 2)
        ref = pathwise_loss_quadrature(net, kern, SCHED, x0)
        means = []
        for b in range(10):
            _, paths = noise_batch(kern, SCHED, np.full(10**4, x0), 1.0, 1000 + b)
            means.append(campbell_terms(net, paths).mean() - ref)
        x = np.arange(10)
        slope = np.polyfit(x, means, 1)[0]
        sd = np.std(means, ddof=1)
        assert abs(np.mean(means)) < 4 * sd / np.sqrt(10)
        assert abs(slope) < 4 * sd / np.sqrt(((x - x.mean()) ** 2).sum())


class TestGapReport:
    def test_exact_predictors(self):
        q = np.array([0.5, 0.3, 0.2, 0.0])
        kern = AbsorbKernel(4)
        post, _ = bin_posterior(kern, SCHED, q, 16)
        rep = nll_gap_report(kern, SCHED, q, TabularDenoiser.from_probs(post), PathPredictor.exact(4, 16))
        assert abs(rep.residual) < 1e-10
        assert rep.ipg > 0 and rep.cal_path < 1e-12

    def test_point_mass(self):
        q = np.array([0.0, 1.0, 0.0])
        kern = AbsorbKernel(3)
        probs = np.zeros((3, 4, 3))
        probs[..., 1] = 1.0
        rep = nll_gap_report(kern, SCHED, q, TabularDenoiser.from_probs(probs), PathPredictor.exact(3, 4))
        assert abs(rep.ipg) < 1e-15 and rep.h_snapshot == 0 and rep.h_path == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_identity_random_predictors(self, seed):
        rng = np.random.default_rng(seed)
        q = np.append(rng.dirichlet(np.ones(3)), 0.0)
        rep = nll_gap_report(AbsorbKernel(4), SCHED, q, TabularDenoiser(4, 8, logits=rng.standard_normal((4, 8, 4))),
                             PathPredictor(4, 8, seed=seed))
        assert abs(rep.residual) < 1e-10 and rep.ipg >= 0

    def test_requires_absorbing(self):
        with pytest.raises(NotImplementedError):
            nll_gap_report(UniformKernel(3), SCHED, np.full(3, 1 / 3), TabularDenoiser(3), PathPredictor(3))
