from math import factorial

import numpy as np
import pytest

from gu_crns import build_rect_mesh, integrate, rule_for_degree
from gu_crns.quadrature import QuadratureRule


def factorial_oracle(a, b, c):
    """Average of lambda1^a lambda2^b lambda3^c over a triangle."""
    return 2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


@pytest.mark.parametrize("d", range(1, 9))
def test_exactness_against_factorial_formula(d):
    rule = rule_for_degree(d)
    assert rule.degree >= d
    lam = rule.points
    for a in range(d + 1):
        for b in range(d + 1 - a):
            for c in range(d + 1 - a - b):
                val = np.sum(rule.weights * lam[:, 0] ** a * lam[:, 1] ** b * lam[:, 2] ** c)
                ref = factorial_oracle(a, b, c)
                assert abs(val - ref) <= 1e-13 * ref, (a, b, c)


@pytest.mark.parametrize("d", range(1, 9))
def test_rule_invariants(d):
    rule = rule_for_degree(d)
    assert abs(rule.weights.sum() - 1.0) <= 1e-14
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(rule.points >= 0) and np.all(rule.points <= 1)


def test_centroid_rule_on_reference_triangle():
    rule = rule_for_degree(1)
    assert rule.n_points == 1
    np.testing.assert_allclose(rule.points[0], [1 / 3] * 3)
    # |T| = 1/2: integral of lambda1 is 1/6
    assert 0.5 * np.sum(rule.weights * rule.points[:, 0]) == pytest.approx(1 / 6, abs=1e-15)


def test_bubble_integral():
    rule = rule_for_degree(7)
    lam = rule.points
    A = 0.37
    val = A * np.sum(rule.weights * 27 * lam[:, 0] * lam[:, 1] * lam[:, 2])
    assert val == pytest.approx(0.45 * A, rel=1e-14)


@pytest.mark.parametrize("d", [0, 9, -1])
def test_unsupported_degree(d):
    with pytest.raises(ValueError):
        rule_for_degree(d)


def test_integrate_on_unit_square():
    m = build_rect_mesh(1, 1, 32, 32)
    r = rule_for_degree(7)
    assert integrate(m, r, lambda x, y: np.ones_like(x)) == pytest.approx(1.0, abs=1e-13)
    assert integrate(m, r, lambda x, y: x) == pytest.approx(0.5, abs=1e-14)
    val = integrate(m, r, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    assert abs(val - 4 / np.pi**2) <= 1e-5


def test_affine_invariance():
    # two different triangles of equal area: same barycentric monomial integral
    r = rule_for_degree(5)
    f = r.points[:, 0] ** 2 * r.points[:, 1] ** 3
    assert isinstance(r, QuadratureRule)
    m1 = build_rect_mesh(1, 1, 1, 1)
    m2 = build_rect_mesh(2, 0.5, 1, 1)
    assert m1.areas[0] == pytest.approx(m2.areas[0])
    assert m1.areas[0] * np.sum(r.weights * f) == pytest.approx(m2.areas[1] * np.sum(r.weights * f), rel=1e-15)
