import json

import numpy as np
import pytest
from conftest import within_sigma
from hypothesis import given
from hypothesis import strategies as st

from snapdiff.config import (ConfigError, Corpus, KernelSpec, RunConfig, build_kernel, encode_text,
                             load_corpus, load_tokens, save_tokens)
from snapdiff.kernels import AbsorbKernel, SikDenseKernel, SikKnnKernel, UniformKernel


class TestRunConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert RunConfig.from_json(cfg.to_json()).to_dict() == cfg.to_dict()

    @given(st.sampled_from(["uniform", "absorb", "sik_knn", "sik_dense"]), st.integers(2, 100),
           st.floats(1e-3, 1.0), st.integers(1, 10**6), st.sampled_from(["snapshot", "campbell"]),
           st.integers(1, 4), st.sampled_from(["mixture", "bridge"]))
    def test_round_trip_fixed_point(self, kind, m, lr, steps, objective, workers, plugin):
        d = RunConfig().to_dict()
        d["kernel"].update(kind=kind, m=m)
        d["train"].update(lr=lr, steps=steps)
        d["sampler"]["plugin"] = plugin
        d.update(objective=objective, workers=workers)
        once = RunConfig.from_dict(d).to_json()
        assert RunConfig.from_json(once).to_json() == once
        assert json.loads(once) == d

    @pytest.mark.parametrize("patch", [
        {"bogus": 1},
        {"kernel": {"kind": "uniform", "mm": 3}},
        {"train": {"learning_rate": 0.1}},
        {"sampler": {"plug": "bridge"}},
    ])
    def test_unknown_keys_rejected(self, patch):
        with pytest.raises(ConfigError, match="unknown keys"):
            RunConfig.from_dict(patch)

    @pytest.mark.parametrize("patch", [
        {"objective": "elbo"}, {"workers": 0}, {"kernel": {"kind": "gaussian"}},
        {"sampler": {"plugin": "x"}}, {"schedule": {"kind": "cosine"}}, {"kernel": []},
    ])
    def test_invalid_values_rejected(self, patch):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(patch)

    def test_invalid_json(self):
        with pytest.raises(ConfigError):
            RunConfig.from_json("{not json")

    def test_load(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 7, "kernel": {"kind": "absorb", "m": 9}}))
        cfg = RunConfig.load(p)
        assert cfg.seed == 7 and cfg.kernel.m == 9


class TestBuildKernel:
    @pytest.mark.parametrize("kind,cls", [("uniform", UniformKernel), ("absorb", AbsorbKernel),
                                          ("sik_knn", SikKnnKernel), ("sik_dense", SikDenseKernel)])
    def test_kinds(self, kind, cls):
        kern = build_kernel({"kind": kind, "m": 12, "k": 4})
        assert isinstance(kern, cls) and kern.m == 12

    def test_k_clipped_to_vocabulary(self):
        kern = build_kernel(KernelSpec(kind="sik_knn", m=4, k=64))
        assert kern.graph.ids.shape[1] == 3

    def test_embedding_size_mismatch(self, tmp_path):
        from snapdiff.embeddings import grid_embeddings, save_embeddings
        path = str(tmp_path / "e.npy")
        save_embeddings(path, grid_embeddings(5))
        with pytest.raises(ConfigError):
            build_kernel({"kind": "sik_knn", "m": 6, "embeddings": path})


class TestCorpus:
    def test_text_chunks(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("abab")
        c = load_corpus({"kind": "text", "path": str(p), "alphabet": "ab", "length": 2})
        np.testing.assert_array_equal(c.sequences, [[0, 1], [0, 1]])
        assert c.decode([1, 0, 5]) == "ba_"

    def test_tail_dropped(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("abcab")
        c = load_corpus({"kind": "text", "path": str(p), "length": 2})
        assert c.sequences.shape == (2, 2) and c.alphabet == "abc"

    def test_too_short(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("ab")
        with pytest.raises(ValueError, match="shorter"):
            load_corpus({"kind": "text", "path": str(p), "length": 5})

    def test_out_of_alphabet_byte_offset(self):
        with pytest.raises(ValueError, match="byte offset 3"):
            encode_text("aé?", "aé")
        with pytest.raises(ValueError, match="'z' at byte offset 2"):
            encode_text("abz", "ab")

    def test_token_round_trip(self, tmp_path, rng):
        toks = rng.integers(0, 50257, size=1000)
        path = tmp_path / "t.tok"
        save_tokens(path, toks, 50257)
        m, back = load_tokens(path)
        assert m == 50257
        np.testing.assert_array_equal(back, toks)
        c = load_corpus({"kind": "tokens", "path": str(path), "length": 100})
        assert c.sequences.shape == (10, 100) and c.m == 50257

    def test_bad_token_file(self, tmp_path):
        path = tmp_path / "t.tok"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ValueError, match="TOK1"):
            load_tokens(path)

    def test_synthetic_frequencies(self):
        q = [0.3, 0.25, 0.2, 0.1, 0.1, 0.05]
        c = load_corpus({"kind": "synthetic", "probs": q, "num": 1000, "length": 1000, "seed": 1})
        freq = np.bincount(c.sequences.ravel(), minlength=6) / 10**6
        assert within_sigma(freq, np.array(q), 10**6)

    @pytest.mark.parametrize("spec", [
        {"kind": "synthetic", "probs": [0.5, 0.6]},
        {"kind": "synthetic", "extra": 1},
        {"kind": "text", "path": "x", "bad": 1},
        {"kind": "csv"},
    ])
    def test_bad_specs(self, spec):
        with pytest.raises(ConfigError):
            load_corpus(spec)

    def test_vocabulary_bounds(self):
        with pytest.raises(ValueError):
            Corpus(np.array([[0, 4]]), 4)
