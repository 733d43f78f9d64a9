import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from wpnode.autodiff import init_params, mlp_apply
from wpnode.data import reference_nodes
from wpnode.errors import ConfigurationError
from wpnode.weakform import (
    SubdomainWeights,
    TestFunction,
    antiderivative_eval,
    horner,
    phi_derivative_coeffs,
    weak_loss,
    weak_loss_indexed,
    weak_residual,
    weak_weights,
)

from oracles import gauss_legendre_weights, phi_integral

s_sym = sympy.Symbol("s")


def test_coefficient_examples():
    np.testing.assert_array_equal(phi_derivative_coeffs(2, 0), [1, 0, -2, 0, 1])
    np.testing.assert_array_equal(phi_derivative_coeffs(2, 1), [0, -4, 0, 4])
    np.testing.assert_array_equal(phi_derivative_coeffs(1, 2), [-2])


@pytest.mark.parametrize("p", [1, 2, 5, 16, 20])
@pytest.mark.parametrize("d", [0, 1, 2, 3])
def test_coefficients_match_symbolic_derivative(p, d):
    poly = sympy.Poly(sympy.diff((1 - s_sym**2) ** p, s_sym, d), s_sym)
    expected = np.array([float(c) for c in reversed(poly.all_coeffs())])
    got = phi_derivative_coeffs(p, d)
    np.testing.assert_allclose(got[: expected.size], expected, rtol=1e-15)
    assert not np.any(got[expected.size :])


@pytest.mark.parametrize("p", range(1, 21))
def test_test_function_structure(p):
    tf = TestFunction.of_order(p)
    assert abs(tf(1.0)) < 1e-12 and abs(tf(-1.0)) < 1e-12
    assert tf(0.0) == 1.0
    assert not np.any(tf.phi[1::2])  # even
    assert not np.any(tf.dphi[0::2])  # odd


def test_antiderivative_examples():
    assert antiderivative_eval("phi", 1, 0, 1.0) - antiderivative_eval("phi", 1, 0, -1.0) == pytest.approx(4 / 3)
    assert antiderivative_eval("psi", 1, 0, 1.0) - antiderivative_eval("psi", 1, 0, -1.0) == pytest.approx(0, abs=1e-15)
    for p in (1, 4, 16):
        diff = antiderivative_eval("phi", p, 1, 1.0) - antiderivative_eval("phi", p, 1, -1.0)
        assert diff == pytest.approx(0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        antiderivative_eval("chi", 1, 0, 0.0)


def test_weights_hand_example():
    w = weak_weights(reference_nodes(3), p=1, length=2.0)
    np.testing.assert_allclose(w.w_rhs, [0.25, 5 / 6, 0.25], atol=1e-15)
    np.testing.assert_allclose(w.w_lhs, [2 / 3, 0, -2 / 3], atol=1e-15)


@pytest.mark.parametrize("method", ["stable", "antiderivative"])
def test_weights_against_quadrature_small_grids(method):
    # the direct primitive differences are only trustworthy for modest p and M
    for p in (1, 2, 4, 8):
        for m in (3, 10, 20):
            nodes = reference_nodes(m)
            w = weak_weights(nodes, p, 1.3, method)
            lhs, rhs = gauss_legendre_weights(nodes, p, 1.3)
            np.testing.assert_allclose(w.w_lhs, lhs, atol=1e-10, rtol=0)
            np.testing.assert_allclose(w.w_rhs, rhs, atol=1e-10, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(3, 200), st.floats(0.01, 10))
def test_weight_sum_rules_and_symmetry(p, m, length):
    w = weak_weights(reference_nodes(m), p, length)
    assert abs(w.w_lhs.sum()) < 1e-10
    assert w.w_rhs.sum() == pytest.approx(0.5 * length * phi_integral(p), rel=1e-10)
    np.testing.assert_allclose(w.w_rhs, w.w_rhs[::-1], atol=1e-13 * max(1, length))
    np.testing.assert_allclose(w.w_lhs, -w.w_lhs[::-1], atol=1e-13)


def test_weights_on_nonuniform_nodes():
    nodes = np.sort(np.concatenate([[-1.0, 1.0], np.random.default_rng(0).uniform(-1, 1, 15)]))
    w = weak_weights(nodes, 16, 2.0)
    lhs, rhs = gauss_legendre_weights(nodes, 16, 2.0)
    np.testing.assert_allclose(w.w_lhs, lhs, atol=1e-10)
    np.testing.assert_allclose(w.w_rhs, rhs, atol=1e-10)


def test_weights_validate_nodes():
    with pytest.raises(ConfigurationError):
        weak_weights(np.array([-1.0]), 2)
    with pytest.raises(ConfigurationError):
        weak_weights(np.array([-1.0, 0.5, 0.2, 1.0]), 2)
    with pytest.raises(ConfigurationError):
        weak_weights(np.array([-0.9, 1.0]), 2)


def test_weights_csv(tmp_path):
    w = weak_weights(reference_nodes(5), 3, 1.0)
    w.to_csv(tmp_path / "w.csv")
    rows = (tmp_path / "w.csv").read_text().splitlines()
    assert rows[0] == "i,w_lhs,w_rhs" and len(rows) == 6
    assert float(rows[3].split(",")[2]) == w.w_rhs[2]


# residual -----------------------------------------------------------------------------


def test_residual_exact_for_linear_data():
    nodes = reference_nodes(11)
    w = weak_weights(nodes, 16, 2.0)
    r = weak_residual(nodes[:, None], np.ones((11, 1)), w)
    assert abs(r[0]) < 1e-12
    r0 = weak_residual(np.full((11, 2), 3.7), np.zeros((11, 2)), w)
    assert np.all(np.abs(r0) < 1e-12)


def test_residual_shape_mismatch():
    w = weak_weights(reference_nodes(5), 2, 1.0)
    with pytest.raises(ConfigurationError):
        weak_residual(np.zeros((4, 2)), np.zeros((4, 2)), w)


def _sin_residual(m, p):
    a, b = 0.3, 1.5
    t = np.linspace(a, b, m)
    w = weak_weights(reference_nodes(m), p, b - a)
    return abs(weak_residual(np.sin(t)[:, None], np.cos(t)[:, None], w)[0])


@pytest.mark.parametrize("p", [1, 2, 4])
def test_residual_shrinks_at_least_second_order(p):
    ratios = [_sin_residual(m, p) / _sin_residual(2 * m - 1, p) for m in (11, 21, 41)]
    assert min(ratios) >= 4.0


def test_residual_interpolation_errors_cancel_to_fourth_order():
    # the h^2 errors of the u and f terms cancel after integrating by parts,
    # leaving an h^4 residual for exact data (p = 1: ratio 16 per halving)
    ratios = [_sin_residual(m, 1) / _sin_residual(2 * m - 1, 1) for m in (21, 41, 81)]
    for r in ratios:
        assert r == pytest.approx(16.0, rel=0.02)


def test_noise_suppression_statistics():
    m, length, sigma = 60, 0.59, 0.05
    t = np.linspace(0, length, m)
    w = weak_weights(reference_nodes(m), 16, length)
    clean = np.sin(3 * t)[:, None]
    f = 3 * np.cos(3 * t)[:, None]
    base = weak_residual(clean, f, w)[0]
    rng = np.random.default_rng(7)
    noise = sigma * rng.standard_normal((10_000, m, 1))
    r = weak_residual(clean[None] + noise, np.broadcast_to(f, noise.shape), w)[:, 0]
    expected_std = np.linalg.norm(w.w_lhs) * sigma
    assert r.std() == pytest.approx(expected_std, rel=0.1)
    assert abs(r.mean() - base) < 4 * expected_std / np.sqrt(r.size)


# losses -------------------------------------------------------------------------------


def test_zero_model_loss_is_lhs_term():
    p = init_params([2, 2], seed=0)
    p = p.map(np.zeros_like)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(5, 8, 2))
    w = weak_weights(reference_nodes(8), 4, 0.7)
    c = np.einsum("bmd,m->bd", u, w.w_lhs)
    assert weak_loss(p, u, w).item() == pytest.approx(np.mean(np.sum(c**2, axis=1)), rel=1e-14)


def test_true_field_on_linear_problem_gives_tiny_loss():
    # du/dt = A u with A nilpotent: the solution is linear in t
    p = init_params([2, 2], seed=0)
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    p = type(p)(((a, np.zeros(2)),))
    t = np.linspace(0, 0.5, 20)
    u = np.stack([1 + 2 * t, np.full_like(t, 2.0)], axis=1)
    w = weak_weights(reference_nodes(20), 16, 0.5)
    assert weak_loss(p, u[None], w).item() < 1e-20


def test_indexed_loss_matches_dense():
    p = init_params([3, 8, 3], seed=1)
    series = np.random.default_rng(1).normal(size=(100, 3))
    index = np.array([np.arange(s, s + 10) for s in (0, 5, 50, 90)])
    w = weak_weights(reference_nodes(10), 16, 0.09)
    a = weak_loss(p, series[index], w).item()
    b = weak_loss_indexed(p, series, index, w).item()
    assert a == pytest.approx(b, rel=1e-13)


def test_loss_reversal_invariance():
    p = init_params([3, 8, 3], seed=2)
    u = np.random.default_rng(2).normal(size=(6, 12, 3))
    w = weak_weights(reference_nodes(12), 16, 0.11)
    a = weak_loss(p, u, w).item()
    # relabelling the nodes together with the weights is a pure permutation
    w_perm = SubdomainWeights(w.w_lhs[::-1].copy(), w.w_rhs[::-1].copy(), w.p, w.m, w.length)
    assert weak_loss(p, u[:, ::-1], w_perm).item() == pytest.approx(a, abs=1e-12)
    # running time backwards flips w_lhs and the sign of the field: r -> -r
    w_rev = SubdomainWeights(-w.w_lhs[::-1].copy(), w.w_rhs[::-1].copy(), w.p, w.m, w.length)
    (w0, b0), (w1, b1) = p.layers
    neg = type(p)(((w0, b0), (-w1, -b1)))
    assert weak_loss(neg, u[:, ::-1], w_rev).item() == pytest.approx(a, abs=1e-12)


def test_loss_node_count_mismatch():
    p = init_params([3, 3])
    w = weak_weights(reference_nodes(5), 2, 1.0)
    with pytest.raises(ConfigurationError):
        weak_loss(p, np.zeros((2, 6, 3)), w)


def test_tracked_loss_returns_scalar_tensor():
    p = init_params([3, 4, 3], seed=3).track()
    w = weak_weights(reference_nodes(5), 2, 1.0)
    loss = weak_loss(p, np.ones((2, 5, 3)), w)
    assert loss.data.shape == ()
    assert horner(np.array([1.0, 2.0]), 3.0) == 7.0
    assert mlp_apply(p, np.ones(3)).shape == (3,)
