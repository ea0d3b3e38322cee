import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earm.mesh import build_mesh, unit_square_mesh
from earm.problems import (KELLOGG_R, CoefficientField, FacetWeights, as_tensor, facet_weights, get_problem,
                           jump, kellogg_problem, lower_average, lshape_problem, manufactured_problem,
                           quasi_monotone_vertices, upper_average)


def test_kellogg_parameters():
    p = kellogg_problem()
    assert p.params["beta"] == 0.1
    assert p.params["R"] == pytest.approx(161.4476387975881, rel=1e-15)
    assert p.params["rho"] == pytest.approx(np.pi / 4, rel=1e-15)
    assert p.params["sigma"] == pytest.approx(-14.92256510455152, rel=1e-15)


def test_kellogg_value_against_mpmath():
    # oracles.kellogg_u(1, pi/4) at 40 digits
    p = kellogg_problem()
    c = np.cos(np.pi / 4)
    assert p.u(np.array([c]), np.array([c]))[0] == pytest.approx(-0.078459095727845156, rel=1e-13)


def test_kellogg_continuity_and_flux_across_axes():
    p = kellogg_problem()
    r = np.linspace(0.01, 1.0, 100)
    eps = 1e-9
    for th in (np.pi / 2, np.pi, 3 * np.pi / 2, 2 * np.pi - 1e-12):
        lo, hi = th - eps, th + eps
        ul = p.u(r * np.cos(lo), r * np.sin(lo))
        uh = p.u(r * np.cos(hi), r * np.sin(hi))
        assert np.abs(ul - uh).max() < 1e-8 * np.abs(ul).max()
    # flux continuity: alpha d(u)/d(theta) across the positive y axis (R on the right)
    d = 1e-7
    th = np.pi / 2
    right = (p.u(r * np.cos(th - d), r * np.sin(th - d)) - p.u(r * np.cos(th - 2 * d), r * np.sin(th - 2 * d))) / d
    left = (p.u(r * np.cos(th + 2 * d), r * np.sin(th + 2 * d)) - p.u(r * np.cos(th + d), r * np.sin(th + d))) / d
    assert np.allclose(KELLOGG_R * right, left, rtol=1e-4)


def test_kellogg_energy_against_area_oracle():
    # oracles.kellogg_energy_sq (mpmath, independent boundary integral)
    assert kellogg_problem().energy_norm_sq == pytest.approx(0.319238044578542, rel=1e-12)


def test_lshape_values():
    p = lshape_problem()
    assert p.u(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(np.sqrt(3) / 2, rel=1e-14)
    assert p.u(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-15)
    # zero on the re-entrant edges
    y = -np.linspace(0.1, 1, 7)
    assert np.abs(p.u(0 * y, y)).max() < 1e-14
    m = p.initial_mesh(1)
    assert m.num_elements == 12


@pytest.mark.parametrize("poly, A, expected", [
    # sympy: -div(A grad u)
    ({(2, 1): 1.0}, [[2, 0], [0, 3]], lambda x, y: -4 * y),
    ({(1, 0): 2.0, (0, 1): -1.0, (0, 0): 3.0}, np.eye(2), lambda x, y: 0 * x),
    ({(2, 0): 1.0, (0, 2): 1.0}, np.eye(2), lambda x, y: -4 + 0 * x),
])
def test_manufactured_source(poly, A, expected):
    c = np.zeros((4, 4))
    for (i, j), v in poly.items():
        c[i, j] = v
    p = manufactured_problem(3, coeff=A, poly=c)
    x, y = np.random.default_rng(0).random((2, 20))
    assert np.allclose(p.f(x, y), expected(x, y), atol=1e-13)


def test_manufactured_interface_continuity():
    p = manufactured_problem(2, coeff={0: 1.0, 1: 5.0})
    y = np.linspace(0, 1, 11)
    eps = 1e-12
    assert np.allclose(p.u(0.5 - eps + 0 * y, y), p.u(0.5 + eps + 0 * y, y), atol=1e-10)
    gl = p.grad_u(0.5 - eps + 0 * y, y)[0] * 1.0
    gr = p.grad_u(0.5 + eps + 0 * y, y)[0] * 5.0
    assert np.allclose(gl, gr, atol=1e-10)


def test_get_problem_names():
    assert get_problem("kellogg").name == "kellogg"
    assert get_problem("manufactured:2").params["degree"] == 2
    with pytest.raises(ValueError):
        get_problem("nope")


def test_as_tensor_forms_and_spd_check():
    assert np.array_equal(as_tensor(2.0), 2 * np.eye(2))
    assert np.array_equal(as_tensor([1, 0.5, 2]), [[1, 0.5], [0.5, 2]])
    with pytest.raises(ValueError):
        CoefficientField({0: [[1, 2], [2, 1]]}, np.zeros(1, dtype=int))
    with pytest.raises(ValueError):
        CoefficientField({0: [[1, 0.1], [0.2, 1]]}, np.zeros(1, dtype=int))
    with pytest.raises(ValueError, match="no tensor"):
        CoefficientField({0: 1.0}, np.array([0, 1]))


def two_region_mesh():
    v = [(0, 0), (1, 0), (1, 1), (0, 1)]
    t = [(0, 1, 2), (0, 2, 3)]
    tags = {(0, 1): 1, (1, 2): 1, (2, 3): 1, (3, 0): 1}
    return build_mesh(v, t, tags, region=[0, 1])


def test_facet_weights_example():
    m = two_region_mesh()
    w = facet_weights(m, CoefficientField({0: 1.0, 1: 3.0}, m.region))
    F = np.flatnonzero(m.facet_elements[:, 1] >= 0)[0]
    assert w.omega_minus[F] == pytest.approx(3 / 4) and w.omega_plus[F] == pytest.approx(1 / 4)
    assert w.alpha_min[F] == 1.0 and w.A_F[F] == 1.0
    b = m.facet_elements[:, 1] < 0
    assert np.all(w.omega_minus[b] == 1) and np.all(w.omega_plus[b] == 0)
    assert np.all(w.A_F[b] == w.alpha_minus[b])


def test_kellogg_weight_on_large_side():
    p = kellogg_problem()
    m = p.initial_mesh(2)
    w = facet_weights(m, p.coefficient(m))
    lam = p.coefficient(m).lam_max
    inter = m.facet_elements[:, 1] >= 0
    fe = m.facet_elements[inter]
    mixed = lam[fe[:, 0]] != lam[fe[:, 1]]
    assert mixed.any()
    om, op = w.omega_minus[inter][mixed], w.omega_plus[inter][mixed]
    w_big = np.where(lam[fe[mixed, 0]] > 1, om, op)
    assert np.allclose(w_big, 1 / (1 + KELLOGG_R), rtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_weight_inequalities(a, b):
    m = two_region_mesh()
    w = facet_weights(m, CoefficientField({0: a, 1: b}, m.region))
    F = np.flatnonzero(m.facet_elements[:, 1] >= 0)[0]
    om, op = w.omega_minus[F], w.omega_plus[F]
    assert om + op == pytest.approx(1.0, rel=1e-15)
    harm = om * w.alpha_minus[F]
    assert harm == pytest.approx(op * w.alpha_plus[F], rel=1e-12)
    assert w.alpha_min[F] / 2 * (1 - 1e-12) <= harm <= w.alpha_min[F] * (1 + 1e-12)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_jump_product_identity(v, am, ap):
    a_m, a_p, b_m, b_p = (np.array([x]) for x in v)
    w = FacetWeights(np.array([am]), np.array([ap]), np.array([ap / (am + ap)]), np.array([am / (am + ap)]),
                     np.array([min(am, ap)]), np.array([max(am, ap)]), np.array([min(am, ap)]))
    inter = np.array([True])
    lhs = jump(a_m * b_m, a_p * b_p, inter)
    rhs = lower_average(a_m, a_p, w) * jump(b_m, b_p, inter) + jump(a_m, a_p, inter) * upper_average(b_m, b_p, w)
    scale = max(1.0, max(abs(x) for x in v) ** 2)  # intermediate products cancel
    assert abs(lhs - rhs)[0] <= 1e-12 * scale


def test_boundary_averages():
    w = FacetWeights(np.array([2.0]), np.array([np.nan]), np.array([1.0]), np.array([0.0]),
                     np.array([2.0]), np.array([2.0]), np.array([2.0]))
    assert lower_average(np.array([5.0]), np.array([7.0]), w)[0] == 5.0
    assert upper_average(np.array([5.0]), np.array([7.0]), w)[0] == 0.0
    assert jump(np.array([5.0]), np.array([7.0]), np.array([False]))[0] == 5.0


def test_quasi_monotone():
    m = unit_square_mesh(3)
    assert quasi_monotone_vertices(m, CoefficientField({0: np.eye(2)}, m.region)).all()
    p = kellogg_problem()
    m = p.initial_mesh(1)
    qm = quasi_monotone_vertices(m, p.coefficient(m))
    bad = np.flatnonzero(~qm)
    assert len(bad) == 1 and np.allclose(m.vertices[bad[0]], 0)
