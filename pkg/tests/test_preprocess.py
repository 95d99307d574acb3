import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attnembed.data import SeriesDataset
from attnembed.preprocess import (
    InstanceStats,
    channel_merge,
    channel_split,
    denormalize,
    instance_normalize,
    n_windows,
    window_indices,
    window_tokenize,
)


def test_normalize_hand_example():
    u, stats = instance_normalize(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(u, [-1.2247, 0.0, 1.2247], atol=1e-4)
    assert stats.mean == 2.0


def test_normalize_constant_series():
    u, stats = instance_normalize(np.full(12, 4.2))
    np.testing.assert_array_equal(u, np.zeros(12))
    assert stats.std >= 1e-5


def test_round_trip():
    x = np.random.default_rng(0).normal(5, 3, size=(4, 96))
    u, stats = instance_normalize(x)
    np.testing.assert_allclose(denormalize(u, stats), x, atol=1e-10)


def test_denormalize_zeros_give_mean():
    stats = InstanceStats(np.array([[2.5]]), np.array([[0.7]]))
    np.testing.assert_array_equal(denormalize(np.zeros((1, 4)), stats), np.full((1, 4), 2.5))


def test_denormalize_identity_stats():
    y = np.random.default_rng(1).normal(size=(2, 5))
    np.testing.assert_array_equal(denormalize(y, InstanceStats(np.zeros((2, 1)), np.ones((2, 1)))), y)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(3, 64), elements=st.floats(-1e3, 1e3)))
def test_normalized_moments(x):
    u, stats = instance_normalize(x)
    assert abs(u.mean()) <= 1e-10
    if x.std() > 1e-3:
        assert abs(u.var() - 1) <= 1e-8
    np.testing.assert_allclose(denormalize(u, stats), x, atol=1e-9)


def test_channel_split_and_merge():
    vals = np.arange(12.0).reshape(4, 3)
    parts = channel_split(SeriesDataset(vals, ["a", "b", "c"]))
    assert len(parts) == 3 and all(len(p) == 4 for p in parts)
    np.testing.assert_array_equal(channel_merge(parts), vals)


def test_channel_split_single():
    vals = np.arange(5.0)[:, None]
    parts = channel_split(SeriesDataset(vals, ["a"]))
    assert len(parts) == 1
    np.testing.assert_array_equal(parts[0], vals[:, 0])


def test_channels_normalized_independently():
    vals = np.random.default_rng(2).normal(size=(50, 3)) * [1, 10, 100]
    joint, _ = instance_normalize(vals.T)
    for i, col in enumerate(channel_split(SeriesDataset(vals, list("abc")))):
        np.testing.assert_array_equal(instance_normalize(col)[0], joint[i])


@pytest.mark.parametrize("length,w,s,n", [(96, 10, 10, 9), (96, 16, 8, 11), (96, 96, 1, 1), (96, 96, 50, 1)])
def test_window_counts(length, w, s, n):
    assert n_windows(length, w, s) == n
    assert window_tokenize(np.zeros(length), w, s).windows.shape == (n, w)


def test_window_too_large():
    with pytest.raises(ValueError):
        window_tokenize(np.zeros(5), 6, 1)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 80), st.integers(1, 80), st.integers(1, 20))
def test_window_coverage(length, w, s):
    if w > length:
        return
    idx = window_indices(length, w, s)
    n = (length - w) // s + 1
    assert idx.shape == (n, w)
    assert idx.max() < length
    assert length - ((n - 1) * s + w) < s
    u = np.arange(float(length))
    batch = window_tokenize(u, w, s)
    for i in range(n):
        np.testing.assert_array_equal(batch.windows[i], u[i * s : i * s + w])
