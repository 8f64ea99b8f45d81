import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from ltvlab.basis import (design_matrix, evaluate, evaluate_batch, feature_count, format_spec, gradient_batch,
                          make_basis, multi_indices, parse_spec)


def test_monomial_enumeration_1d():
    b = make_basis("monomial", 3, 1)
    assert b.n_features == 4
    assert b.names(["x"]) == ["1", "x", "x^2", "x^3"]
    np.testing.assert_array_equal(evaluate(b, [2.0]), [1, 2, 4, 8])


def test_graded_order_2d():
    b = make_basis("monomial", 2, 2)
    assert b.names(["x", "y"]) == ["1", "x", "y", "x^2", "x*y", "y^2"]


def test_hermite_order2_values():
    b = make_basis("hermite", 2, 1)
    x = 1.7
    np.testing.assert_allclose(evaluate(b, [x]), [1, x, (x * x - 1) / math.sqrt(2)], rtol=1e-15)


def test_hermite_orthonormal_by_quadrature():
    # Gauss-Hermite (probabilists') nodes integrate polynomials of degree < 2*40 exactly
    nodes, weights = hermegauss(40)
    weights = weights / math.sqrt(2 * math.pi)
    b = make_basis("hermite", 6, 1)
    P = evaluate_batch(b, nodes[:, None])
    G = (P * weights[:, None]).T @ P
    np.testing.assert_allclose(G, np.eye(7), atol=1e-12)


def test_legendre_orthogonal_by_quadrature():
    nodes, weights = leggauss(20)
    b = make_basis("legendre", 5, 1)
    P = evaluate_batch(b, nodes[:, None])
    G = (P * weights[:, None]).T @ P
    np.testing.assert_allclose(G, np.diag([2 / (2 * k + 1) for k in range(6)]), atol=1e-13)


def test_legendre_p2_at_zero():
    assert evaluate(make_basis("legendre", 2, 1), [0.0])[2] == -0.5


def test_zero_input_monomial():
    v = evaluate(make_basis("monomial", 3, 3), [0.0, 0.0, 0.0])
    assert v[0] == 1 and np.all(v[1:] == 0)


def test_poly_trig_angle_features():
    b = make_basis("poly_trig", 2, 1, angles=(0,))
    v = evaluate(b, [np.pi])
    assert abs(v[-2]) < 1e-15 and abs(v[-1] + 1) < 1e-15
    assert b.names(["th"])[-2:] == ["sin(th)", "cos(th)"]


def test_errors():
    with pytest.raises(ValueError):
        make_basis("fourier", 2, 1)
    with pytest.raises(ValueError):
        evaluate(make_basis("monomial", 2, 2), [1.0])
    with pytest.raises(ValueError):
        design_matrix(make_basis("monomial", 2, 1), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        make_basis("monomial", 2, 2, angles=(0,))


@given(st.sampled_from(["monomial", "hermite", "legendre", "poly_trig"]), st.integers(0, 5), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_feature_count_and_distinct(family, order, dim):
    angles = (0,) if family == "poly_trig" else ()
    b = make_basis(family, order, dim, angles)
    assert b.n_features == feature_count(family, order, dim, len(angles))
    assert len({tuple(a) for a in b.exponents}) == len(b.exponents)
    assert not b.exponents[0].any()
    assert all(a.sum() <= order for a in b.exponents)


def test_design_matrix_rows():
    b = make_basis("monomial", 1, 1)
    D = design_matrix(b, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(D.values, [[1, 1], [1, 2], [1, 3]])
    Z = design_matrix(make_basis("monomial", 3, 2), np.zeros((4, 2)))
    assert np.all(Z.values[:, 0] == 1) and np.all(Z.values[:, 1:] == 0)


def test_design_matrix_hermite_mc_gram():
    R = 10**5
    x = np.random.default_rng(0).standard_normal((R, 1))
    D = design_matrix(make_basis("hermite", 4, 1), x)
    G = D.values.T @ D.values / R
    # 5/sqrt(R) scaled by the feature's fourth-moment spread (up to ~sqrt(E[psi_4^4]) ~ 10)
    assert np.max(np.abs(G - np.eye(5))) < 5 / np.sqrt(R) * 10


def test_monomial_gram_matches_moments():
    R = 10**6
    x = np.random.default_rng(1).standard_normal((R, 1))
    D = design_matrix(make_basis("monomial", 2, 1), x)
    G = D.values.T @ D.values / R
    np.testing.assert_allclose(G, [[1, 0, 1], [0, 1, 0], [1, 0, 3]], atol=0.05)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.sampled_from(["monomial", "hermite", "legendre"]))
@settings(max_examples=30, deadline=None)
def test_gradient_matches_central_difference(z, family):
    b = make_basis(family, 3, 3) if family != "monomial" else make_basis("poly_trig", 3, 3, angles=(1,))
    z = np.array(z)
    g = gradient_batch(b, z[None])[0]
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (evaluate(b, z + e) - evaluate(b, z - e)) / (2 * h)
        np.testing.assert_allclose(g[:, j], fd, atol=1e-6, rtol=1e-6)


def test_spec_round_trip():
    b = parse_spec("poly_trig:3:angles=1", 5)
    assert b.angles == (1,) and b.n_features == math.comb(8, 3) + 2
    assert format_spec(b) == "poly_trig:3:angles=1"
    assert parse_spec(format_spec(b), 5) == b
    with pytest.raises(ValueError):
        parse_spec("monomial", 2)
    with pytest.raises(ValueError):
        parse_spec("monomial:2:foo=1", 2)


def test_multi_indices_graded():
    m = multi_indices(2, 2)
    assert [tuple(r) for r in m] == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
