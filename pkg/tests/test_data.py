import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wpnode.data import (
    MinMaxScaler,
    from_reference,
    make_subdomains,
    minmax_apply,
    minmax_fit,
    minmax_invert,
    reference_nodes,
    sliding_windows,
    to_reference,
)
from wpnode.errors import ConfigurationError


def test_scaler_maps_range_to_unit_interval():
    x = np.array([[0.0, -2.0], [1.0, 2.0], [0.5, 0.0]])
    s = minmax_fit(x)
    y = minmax_apply(s, x)
    np.testing.assert_allclose(y.min(axis=0), 0.0)
    np.testing.assert_allclose(y.max(axis=0), 1.0)


def test_scaler_does_not_clip():
    s = minmax_fit(np.array([[0.0], [1.0]]))
    assert minmax_apply(s, np.array([[2.0]]))[0, 0] == 2.0


def test_scaler_rejects_constant_dimension():
    with pytest.raises(ConfigurationError):
        minmax_fit(np.array([[1.0, 0.0], [1.0, 2.0]]))


@settings(max_examples=50)
@given(arrays(np.float64, (20, 3), elements=st.floats(-1e3, 1e3)))
def test_scaler_round_trip(x):
    if np.any(np.ptp(x, axis=0) < 1e-3):
        return
    s = minmax_fit(x)
    np.testing.assert_allclose(minmax_invert(s, minmax_apply(s, x)), x, atol=1e-12 * max(1.0, np.abs(x).max()))
    assert MinMaxScaler.from_dict(s.to_dict()).data_min.tolist() == s.data_min.tolist()


def test_window_counts():
    x = np.arange(10.0)[:, None]
    assert len(sliding_windows(x, 3, 1)) == 8
    assert len(sliding_windows(x, 10, 1)) == 1
    w = sliding_windows(x, 3, 7)
    assert w.starts.tolist() == [0, 7]
    np.testing.assert_array_equal(w.segments[1, :, 0], [7, 8, 9])
    np.testing.assert_array_equal(w.initial_states[:, 0], [0, 7])


def test_window_too_long():
    with pytest.raises(ConfigurationError):
        sliding_windows(np.zeros((5, 2)), 6)


@given(st.integers(2, 60), st.integers(2, 20), st.integers(1, 9))
def test_window_formula_and_purity(n, length, stride):
    if length > n:
        return
    x = np.random.default_rng(n).normal(size=(n, 2))
    a = sliding_windows(x, length, stride)
    b = sliding_windows(x, length, stride)
    assert len(a) == (n - length) // stride + 1
    assert np.array_equal(a.segments, b.segments) and np.array_equal(a.starts, b.starts)
    assert a.starts[-1] + length <= n


def test_subdomain_examples():
    assert make_subdomains(100, 60, 3).starts.tolist() == [0, 20, 40]
    lay = make_subdomains(10_000, 60, 5000, dt=0.01)
    assert lay.count == 5000 and lay.starts.max() == 9940
    assert lay.length == pytest.approx(0.59)
    assert lay.node_indices().shape == (5000, 60)


def test_subdomain_count_is_capped():
    with pytest.warns(UserWarning):
        lay = make_subdomains(70, 60, 50)
    assert lay.count == 11


@settings(max_examples=60)
@given(st.integers(3, 400), st.integers(2, 50), st.integers(1, 200))
def test_subdomains_valid_and_covering(n, m, k):
    if m > n:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lay = make_subdomains(n, m, k)
    idx = lay.node_indices()
    assert idx.min() >= 0 and idx.max() <= n - 1
    if lay.count >= (n - m) / m + 1:
        assert np.unique(idx).size == n


def test_reference_nodes():
    for m in (2, 3, 60, 81):
        s = reference_nodes(m)
        assert s[0] == -1.0 and s[-1] == 1.0
        np.testing.assert_allclose(s, -1 + 2 * np.arange(m) / (m - 1), atol=1e-15)


@given(st.floats(-100, 100), st.floats(0.01, 50), st.floats(-1, 1))
def test_affine_map_round_trip(a, width, s):
    b = a + width
    t = to_reference(a, b, s)
    assert a - 1e-9 <= t <= b + 1e-9
    assert from_reference(a, b, t) == pytest.approx(s, abs=1e-9)
