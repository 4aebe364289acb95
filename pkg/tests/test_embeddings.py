import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snapdiff.embeddings import (EmbeddingTable, build_neighbor_graph, cluster_embeddings, grid_embeddings,
                                 load_embeddings, load_embeddings_csv, pairwise_distance, save_embeddings)


class TestNeighborGraph:
    def test_collinear_example(self):
        emb = EmbeddingTable(np.array([[0.0], [1.0], [3.0]]))
        g = build_neighbor_graph(emb, 2, "gauss", bandwidth_k=1)
        np.testing.assert_array_equal(g.ids, [[1, 2], [0, 2], [1, 0]])
        np.testing.assert_array_equal(g.rho, [1.0, 1.0, 4.0])

    @pytest.mark.parametrize("metric", ["gauss", "cosine"])
    def test_matches_exhaustive_scan(self, metric):
        emb = cluster_embeddings(128, 8, seed=3)
        g = build_neighbor_graph(emb, 10, metric, block=37)
        full = pairwise_distance(emb, np.arange(128), None, metric)
        for i in range(128):
            d = full[i].copy()
            d[i] = np.inf
            order = np.lexsort((np.arange(128), d))[:10]
            np.testing.assert_array_equal(g.ids[i], order)
            np.testing.assert_allclose(g.dists[i], d[order], atol=1e-12)

    def test_ties_broken_by_id(self):
        emb = grid_embeddings(16)
        g = build_neighbor_graph(emb, 4)
        # interior lattice point 5 has four neighbours at distance 1
        np.testing.assert_array_equal(g.ids[5], [1, 4, 6, 9])

    def test_duplicates_warn_and_floor(self):
        emb = EmbeddingTable(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]))
        with pytest.warns(RuntimeWarning):
            g = build_neighbor_graph(emb, 1)
        assert np.all(g.rho > 0)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            build_neighbor_graph(grid_embeddings(4), 4)

    @pytest.mark.filterwarnings("ignore:duplicate embeddings")
    @given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10)))
    def test_sorted_and_self_free(self, vec):
        g = build_neighbor_graph(EmbeddingTable(vec), 5)
        assert np.all(np.diff(g.dists, axis=1) >= 0)
        assert not np.any(g.ids == np.arange(12)[:, None])


class TestDistances:
    def test_cosine_range(self):
        emb = cluster_embeddings(20, 4, seed=0)
        d = pairwise_distance(emb, np.arange(20), None, "cosine")
        assert d.min() >= 0 and d.max() <= 2 + 1e-12
        np.testing.assert_allclose(np.diag(d), 0, atol=1e-12)

    def test_invalid_table(self):
        with pytest.raises(ValueError):
            EmbeddingTable(np.array([[np.nan]]))


class TestFiles:
    def test_emb1_round_trip(self, tmp_path):
        emb = cluster_embeddings(9, 3, seed=1)
        save_embeddings(tmp_path / "e.emb", emb)
        back = load_embeddings(tmp_path / "e.emb")
        np.testing.assert_array_equal(back.vectors, emb.vectors.astype(np.float32))

    def test_emb1_header(self, tmp_path):
        save_embeddings(tmp_path / "e.emb", grid_embeddings(4))
        raw = (tmp_path / "e.emb").read_bytes()
        assert raw[:4] == b"EMB1" and raw[4:8] == (4).to_bytes(4, "little") and len(raw) == 12 + 4 * 8

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValueError):
            load_embeddings(tmp_path / "x")

    def test_csv(self, tmp_path):
        (tmp_path / "e.csv").write_text("2,2\n0,1\n2,3\n")
        np.testing.assert_array_equal(load_embeddings_csv(tmp_path / "e.csv").vectors, [[0, 1], [2, 3]])
        (tmp_path / "b.csv").write_text("3,2\n0,1\n")
        with pytest.raises(ValueError):
            load_embeddings_csv(tmp_path / "b.csv")
