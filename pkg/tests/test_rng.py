import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from snapdiff.rng import GeneratorStreams, KeyedStreams, as_streams, uniforms, stream_keys


class TestKeyedStreams:
    def test_open_unit_interval(self):
        u = KeyedStreams(0, np.arange(10**5)).at(np.arange(10**5), np.zeros(10**5, dtype=np.int64))
        assert u.min() > 0 and u.max() < 1

    def test_uniform_moments(self):
        n = 10**6
        u = KeyedStreams(7, np.arange(n)).at(np.arange(n), np.arange(n) % 5)
        np.testing.assert_allclose(u.mean(), 0.5, atol=5 * np.sqrt(1 / 12 / n))
        np.testing.assert_allclose(u.var(), 1 / 12, atol=5e-4)

    @given(st.integers(0, 2**63 - 1), st.integers(0, 1000), st.integers(0, 1000))
    def test_draw_depends_only_on_key_and_counter(self, seed, pos, counter):
        a = KeyedStreams(seed, np.arange(pos + 1))
        b = KeyedStreams(seed, np.array([pos]))
        np.testing.assert_array_equal(a.at([pos], [counter]), b.at([0], [counter]))
        np.testing.assert_array_equal(a.subset([pos]).at([0], [counter]), b.at([0], [counter]))

    def test_sequences_and_seeds_decorrelate(self):
        n = 10**5
        base = KeyedStreams(1, np.arange(n)).at(np.arange(n), np.zeros(n, dtype=np.int64))
        for other in (KeyedStreams(2, np.arange(n)), KeyedStreams(1, np.arange(n), sequence=1)):
            u = other.at(np.arange(n), np.zeros(n, dtype=np.int64))
            assert abs(np.corrcoef(base, u)[0, 1]) < 5 / np.sqrt(n)

    def test_counters_decorrelate(self):
        n = 10**5
        ks = stream_keys(3, 0, np.arange(n))
        a, b = uniforms(ks, np.zeros(n, dtype=np.int64)), uniforms(ks, np.ones(n, dtype=np.int64))
        assert abs(np.corrcoef(a, b)[0, 1]) < 5 / np.sqrt(n)


class TestAdapters:
    def test_generator(self):
        s = as_streams(np.random.default_rng(0), 4)
        assert isinstance(s, GeneratorStreams) and s.at(np.arange(4), np.zeros(4)).shape == (4,)

    def test_int(self):
        assert isinstance(as_streams(5, 3), KeyedStreams)
