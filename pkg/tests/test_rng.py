import numpy as np
from hypothesis import given, strategies as st

from dbmlab.rng import CHAIN_STREAM, Stream, stream_key, uniform, uniforms


def test_stream_is_pure_function_of_indices():
    a, b = Stream(7, 3, 2), Stream(7, 3, 2)
    assert [a.random() for _ in range(50)] == [b.random() for _ in range(50)]


def test_streams_differ_by_each_index():
    base = Stream(7, 3, 2).random()
    assert Stream(8, 3, 2).random() != base
    assert Stream(7, 4, 2).random() != base
    assert Stream(7, 3, 3).random() != base
    assert Stream(7, 3).random() == Stream(7, 3, CHAIN_STREAM).random()


def test_uniforms_matches_scalar_draws():
    key = stream_key(np.uint64(1), np.uint64(2), np.uint64(3))
    block = uniforms(key, np.uint64(10), 20)
    assert np.array_equal(block, [uniform(key, np.uint64(10 + i)) for i in range(20)])


def test_uniform_moments():
    key = stream_key(np.uint64(0), np.uint64(0), np.uint64(0))
    u = uniforms(key, np.uint64(0), 200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / len(u))
    hist = np.bincount((u * 10).astype(int), minlength=10)
    chi2 = ((hist - len(u) / 10) ** 2 / (len(u) / 10)).sum()
    assert chi2 < 30  # 9 dof, p ~ 5e-4


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=12), st.integers(0, 2**63))
def test_choice_index_lands_on_positive_weight(weights, seed):
    w = np.array(weights)
    w[len(w) // 2] = 0.0
    if w.sum() == 0:
        w[0] = 1.0
    i = Stream(seed, 0).choice_index(np.cumsum(w))
    assert 0 <= i < len(w) and w[i] > 0


def test_large_seed_accepted():
    assert 0.0 <= Stream(2**64 - 1, 2**40, 2**31).random() < 1.0
