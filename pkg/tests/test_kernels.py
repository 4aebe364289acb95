import numpy as np
import pytest
from conftest import tv, within_sigma
from hypothesis import given
from hypothesis import strategies as st

from snapdiff.embeddings import build_neighbor_graph, cluster_embeddings, grid_embeddings
from snapdiff.kernels import (AbsorbKernel, DenseKernel, Mixture, SikDenseKernel, SikKnnKernel, Temperature,
                              UniformKernel, kernel_column, random_dense_kernel, sample_jump)


def small_variants(m=8):
    emb = cluster_embeddings(m, 3, n_clusters=3, seed=4)
    return {
        "uniform": UniformKernel(m),
        "absorb": AbsorbKernel(m),
        "knn_gauss": SikKnnKernel(emb, build_neighbor_graph(emb, 3, "gauss")),
        "knn_cosine": SikKnnKernel(emb, build_neighbor_graph(emb, 3, "cosine")),
        "dense_gauss": SikDenseKernel(emb, "gauss", block_size=3),
        "dense_cosine": SikDenseKernel(emb, "cosine"),
        "random": random_dense_kernel(m, seed=2),
        "random_timed": random_dense_kernel(m, seed=3, time_dependent=True),
    }


VARIANTS = small_variants()
SIK = [k for k in VARIANTS if k.startswith(("knn", "dense"))]


class TestColumns:
    def test_absorb_column(self):
        np.testing.assert_array_equal(kernel_column(AbsorbKernel(6), 0.3, 3), np.eye(6)[5])

    def test_uniform_column(self):
        np.testing.assert_allclose(kernel_column(UniformKernel(7), 0.8, 2), np.full(7, 1 / 7))

    @pytest.mark.parametrize("name", list(VARIANTS))
    @given(t=st.floats(0, 1), y=st.integers(0, 7))
    def test_column_stochastic(self, name, t, y):
        col = VARIANTS[name].column(t, y)
        assert col.min() >= 0
        assert abs(col.sum() - 1) < 1e-9

    @pytest.mark.parametrize("name", SIK)
    @given(t=st.floats(0, 1), y=st.integers(0, 7))
    def test_sik_zero_diagonal(self, name, t, y):
        assert VARIANTS[name].column(t, y)[y] == 0.0

    @pytest.mark.parametrize("name", list(VARIANTS))
    def test_matrix_stacks_columns(self, name):
        kern = VARIANTS[name]
        for t in (0.0, 0.37, 1.0):
            M = kern.matrix(t)
            for y in range(kern.m):
                np.testing.assert_allclose(M[:, y], kern.column(t, y), atol=1e-14)
            np.testing.assert_allclose(kern.matrices([t, t])[1], M, atol=1e-14)

    @pytest.mark.parametrize("name", list(VARIANTS))
    def test_apply_matches_matrix(self, name, rng):
        kern = VARIANTS[name]
        v = rng.random((kern.m, 3))
        np.testing.assert_allclose(kern.apply(0.4, v), kern.matrix(0.4) @ v, atol=1e-13)
        np.testing.assert_allclose(kern.apply_transpose(0.4, v), kern.matrix(0.4).T @ v, atol=1e-13)

    def test_knn_full_graph_equals_dense(self):
        emb = grid_embeddings(64)
        g = build_neighbor_graph(emb, 63, "gauss")
        knn = SikKnnKernel(emb, g, Temperature(), Mixture(coef=0.0))
        dense = SikDenseKernel(emb, "gauss", rho=g.rho)
        for t in (0.1, 0.5, 0.9):
            for y in (0, 17, 63):
                np.testing.assert_allclose(knn.column(t, y), dense.column(t, y), atol=1e-8)

    def test_dense_flattens_at_high_temperature(self):
        emb = cluster_embeddings(32, 4, seed=1)
        kern = SikDenseKernel(emb, "gauss", Temperature(tau0=1e6, rate=0.0))
        target = np.full(32, 1 / 31)
        target[5] = 0
        assert tv(kern.column(0.5, 5), target) < 1e-3

    def test_dense_blockwise_apply_large_vocab(self, rng):
        emb = cluster_embeddings(600, 3, seed=0)
        kern = SikDenseKernel(emb, "gauss", block_size=128)
        v = rng.random(600)
        ref = np.stack([kern.column(0.3, y) for y in range(600)], axis=1) @ v
        np.testing.assert_allclose(kern.apply(0.3, v), ref, rtol=1e-10)


class TestSampling:
    def test_absorb_always_mask(self, rng):
        kern = AbsorbKernel(10, mask_id=4)
        out = kern.sample(rng.random(1000), rng.integers(0, 10, 1000), rng.random(1000), rng.random(1000))
        assert np.all(out == 4)

    def test_uniform_frequencies(self, rng):
        n, m = 10**6, 50
        out = UniformKernel(m).sample(np.zeros(n), np.zeros(n, dtype=np.int64), rng.random(n), rng.random(n))
        assert within_sigma(np.bincount(out, minlength=m) / n, np.full(m, 1 / m), n)

    @pytest.mark.parametrize("name", list(VARIANTS))
    def test_sampling_matches_column(self, name, rng):
        kern, n, z, t = VARIANTS[name], 10**6, 2, 0.6
        out = kern.sample(np.full(n, t), np.full(n, z), rng.random(n), rng.random(n))
        assert tv(np.bincount(out, minlength=kern.m) / n, kern.column(t, z)) < 0.01

    def test_dense_sampling_across_blocks(self, rng):
        emb = cluster_embeddings(40, 2, seed=5)
        kern = SikDenseKernel(emb, "gauss", Temperature(3.0, 0.0), block_size=7)
        n, z = 4 * 10**5, 11
        out = kern.sample(np.full(n, 0.5), np.full(n, z), rng.random(n), rng.random(n))
        assert not np.any(out == z)
        assert tv(np.bincount(out, minlength=40) / n, kern.column(0.5, z)) < 0.01

    def test_sample_jump_deterministic(self):
        kern = VARIANTS["knn_gauss"]
        assert sample_jump(kern, 0.5, 3, 42) == sample_jump(kern, 0.5, 3, 42)


class TestErrors:
    def test_token_range(self):
        with pytest.raises(IndexError):
            UniformKernel(4).column(0.1, 4)
        with pytest.raises(IndexError):
            sample_jump(AbsorbKernel(4), 0.1, -1, 0)

    def test_missing_embeddings(self):
        with pytest.raises(ValueError):
            SikDenseKernel(None)

    def test_bad_dense(self):
        with pytest.raises(ValueError):
            DenseKernel(np.ones((3, 3)))

    def test_refuse_large_dense(self):
        with pytest.raises(MemoryError):
            UniformKernel(10_000).matrices([0.1])

    def test_bad_mask(self):
        with pytest.raises(ValueError):
            AbsorbKernel(4, mask_id=9)


class TestStationary:
    def test_uniform_stationary(self):
        np.testing.assert_allclose(UniformKernel(5).stationary(1.0), np.full(5, 0.2))

    def test_power_iteration_fixed_point(self):
        kern = random_dense_kernel(6, seed=8)
        pi = kern.stationary(1.0, iters=1000)
        np.testing.assert_allclose(kern.matrix(1.0) @ pi, pi, atol=1e-9)
