import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tracklearn.errors import UsageError
from tracklearn.learn.replay import ReplayBuffer


def fill(buf, n, start=0):
    for i in range(start, start + n):
        buf.add(np.full(buf.obs_dim, i), i, i, np.full(buf.obs_dim, i + 1), i % 2 == 0)


def test_eviction_of_oldest():
    buf = ReplayBuffer(10, 3)
    fill(buf, 13)
    assert len(buf) == 10
    assert sorted(buf.action) == list(range(3, 13))


def test_sampling_is_flat():
    # ten slots keep the chance of any slot leaving a 3-sigma band near 3%
    buf = ReplayBuffer(10, 1)
    fill(buf, 10)
    n = 1_000_000
    rng = np.random.default_rng(0)
    idx = np.concatenate([buf.sample_indices(10, rng) for _ in range(n // 10)])
    counts = np.bincount(idx, minlength=10)
    p = 1 / 10
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma + 1)


def test_batch_contents_consistent():
    buf = ReplayBuffer(20, 2)
    fill(buf, 20)
    b = buf.sample(8, np.random.default_rng(1))
    np.testing.assert_array_equal(b.obs[:, 0], b.action)
    np.testing.assert_array_equal(b.next_obs[:, 0], b.action + 1)
    np.testing.assert_array_equal(b.done, (b.action % 2 == 0).astype(float))


def test_errors():
    with pytest.raises(UsageError):
        ReplayBuffer(0, 2)
    buf = ReplayBuffer(5, 2)
    fill(buf, 2)
    with pytest.raises(UsageError):
        buf.sample(3, np.random.default_rng(0))


def test_pickle_roundtrip_keeps_sampling():
    buf = ReplayBuffer(100, 2)
    fill(buf, 40)
    again = pickle.loads(pickle.dumps(buf))
    a = buf.sample(16, np.random.default_rng(3))
    b = again.sample(16, np.random.default_rng(3))
    np.testing.assert_array_equal(a.obs, b.obs)
    fill(buf, 70, 40)
    fill(again, 70, 40)
    np.testing.assert_array_equal(buf.action, again.action)


@given(st.integers(1, 30), st.integers(0, 100))
def test_size_and_contents(cap, n):
    buf = ReplayBuffer(cap, 1)
    fill(buf, n)
    assert len(buf) == min(cap, n)
    assert set(buf.action[:len(buf)]) == set(range(max(0, n - cap), n))
