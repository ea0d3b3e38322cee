import numpy as np
import pytest
from math import factorial

from earm.quadrature import MAX_ORDER, QuadratureError, line_rule, triangle_rule


def exact_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("order", range(1, MAX_ORDER + 1))
def test_triangle_rule_exact_to_order(order):
    pts, w = triangle_rule(order)
    assert np.all(w > 0)
    assert np.isclose(w.sum(), 0.5, rtol=0, atol=1e-15)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            got = w @ (pts[:, 0] ** a * pts[:, 1] ** b)
            assert got == pytest.approx(exact_monomial(a, b), rel=1e-12, abs=1e-16)


def test_points_inside_reference_triangle():
    pts, _ = triangle_rule(MAX_ORDER)
    assert np.all(pts > 0) and np.all(pts.sum(1) < 1)


def test_order_one_weight_sum():
    _, w = triangle_rule(1)
    assert w.sum() == pytest.approx(0.5, abs=1e-16)


def test_x2y4_matches_symbolic_oracle():
    # sympy: int_0^1 int_0^{1-x} x^2 y^4 dy dx = 1/840
    pts, w = triangle_rule(6)
    assert w @ (pts[:, 0] ** 2 * pts[:, 1] ** 4) == pytest.approx(1 / 840, rel=1e-14)


@pytest.mark.parametrize("s", range(0, 8))
def test_line_rule_integrates_degree_2s_plus_1(s):
    t, w = line_rule(2 * s + 1)
    assert np.all(w > 0) and np.all((t > 0) & (t < 1))
    for p in range(2 * s + 2):
        assert w @ t ** p == pytest.approx(1 / (p + 1), rel=1e-13)


def test_line_rule_not_exact_beyond_order():
    t, w = line_rule(3)  # 2 points
    assert abs(w @ t ** 4 - 1 / 5) > 1e-4


@pytest.mark.parametrize("order", [0, -1, MAX_ORDER + 1])
def test_unsupported_order_raises(order):
    with pytest.raises(QuadratureError):
        triangle_rule(order)
    with pytest.raises(QuadratureError):
        line_rule(order)


def test_rules_are_copies():
    p, w = triangle_rule(4)
    w[:] = 0
    assert triangle_rule(4)[1].sum() == pytest.approx(0.5)
