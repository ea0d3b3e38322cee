import numpy as np
import pytest
import scipy.sparse as sp

from earm.estimator import element_errors, energy_error
from earm.mesh import unit_square_mesh
from earm.problems import kellogg_problem, manufactured_problem
from earm.quadrature import triangle_rule
from earm.solvers import DgParameters, SolverError, solve_matrix, solve_problem
from earm.spaces import physical_points


def test_two_by_two():
    A = sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]])
    x, res = solve_matrix(A, np.array([1.0, 2.0]))
    assert np.allclose(x, [1 / 11, 7 / 11], rtol=1e-14)
    assert res < 1e-14
    x, res = solve_matrix(A, np.array([1.0, 2.0]), backend="cg")
    assert np.allclose(x, [1 / 11, 7 / 11], rtol=1e-11)
    assert np.array_equal(solve_matrix(A, np.zeros(2))[0], [0, 0])


def test_solver_errors():
    with pytest.raises(ValueError):
        solve_matrix(sp.eye(2), np.ones(2), backend="magic")
    with pytest.raises(SolverError):
        solve_matrix(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        DgParameters(gamma=0.0)
    with pytest.raises(ValueError):
        DgParameters(gamma=1.0, delta=2)
    assert DgParameters.default(3).gamma == 90.0


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("disc, delta", [("cg", 1), ("dg", 1), ("dg", 0), ("dg", -1)])
def test_polynomial_solution_is_reproduced(k, disc, delta):
    p = manufactured_problem(k, coeff=[[2.0, 0.5], [0.5, 1.0]])
    m = p.initial_mesh(1)
    u, _ = solve_problem(p, m, k, disc, DgParameters.default(k, delta=delta))
    assert u.residual <= 1e-12
    err = np.sqrt(np.sum(element_errors(u, p, p.coefficient(m)) ** 2))
    assert err < 1e-9


@pytest.mark.parametrize("k", [1, 2])
def test_interface_solution_is_reproduced(k):
    p = manufactured_problem(k, coeff={0: 1.0, 1: 40.0})
    m = p.initial_mesh(1)
    for disc in ("cg", "dg"):
        u, _ = solve_problem(p, m, k, disc)
        assert np.sqrt(np.sum(element_errors(u, p, p.coefficient(m)) ** 2)) < 1e-9


def test_neumann_boundary_polynomial():
    p = manufactured_problem(2, neumann=True)
    m = p.initial_mesh(1)
    for disc in ("cg", "dg"):
        u, _ = solve_problem(p, m, 2, disc)
        assert np.sqrt(np.sum(element_errors(u, p, p.coefficient(m)) ** 2)) < 1e-9


def test_matrix_symmetry():
    p = manufactured_problem(2)
    m = p.initial_mesh(1)
    for disc, delta, sym in (("cg", 1, True), ("dg", 1, True), ("dg", 0, False), ("dg", -1, False)):
        _, system = solve_problem(p, m, 2, disc, DgParameters.default(2, delta=delta))
        A = system.matrix
        asym = abs(A - A.T).max()
        assert (asym <= 1e-13 * abs(A).max()) == sym


def _smooth_problem():
    # degree-6 polynomial: not reproduced by k = 2
    return manufactured_problem(6, n=1)


def test_dg_quadratic_rate():
    p = _smooth_problem()
    errs, hs = [], []
    for n in (2, 4, 8):
        m = unit_square_mesh(n, pattern="diagonal")
        u, _ = solve_problem(p, m, 2, "dg")
        errs.append(np.sqrt(np.sum(element_errors(u, p, p.coefficient(m)) ** 2)))
        hs.append(1 / n)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)


def test_galerkin_orthogonality_cg():
    p = _smooth_problem()
    m = unit_square_mesh(3, pattern="diagonal")
    u, system = solve_problem(p, m, 2, "cg")
    V = u.space
    pts, w = triangle_rule(12)
    x = physical_points(m, pts)
    gu = np.moveaxis(p.grad_u(x[..., 0], x[..., 1]), 0, -1)  # (nK, np, 2)
    coeff = p.coefficient(m)
    phi = V.phys_grad(pts)  # (nK, np, nloc, 2)
    loc = np.einsum("epi,eij,epnj,p,e->en", gu, coeff.A, phi, w, m.det)
    a_u = np.zeros(V.ndofs)
    np.add.at(a_u, V.dof_map, loc)
    r = a_u - system.matrix @ u.values
    free = np.setdiff1d(np.arange(V.ndofs), V.dirichlet_dofs)
    assert np.abs(r[free]).max() < 1e-11 * np.abs(a_u).max()


def test_kellogg_energy_error_against_composite_oracle():
    # oracles.composite_energy_error on square_mesh(4), 200 levels, order 16
    p = kellogg_problem()
    m = p.initial_mesh(4)
    c = p.coefficient(m)
    u, _ = solve_problem(p, m, 1, "cg")
    assert energy_error(u, p, c) == pytest.approx(0.8016028715741708, rel=1e-11)
    u, _ = solve_problem(p, m, 1, "dg")
    assert energy_error(u, p, c) == pytest.approx(0.44577334425554066, rel=1e-11)


def test_unknown_discretization():
    p = manufactured_problem(1)
    with pytest.raises(ValueError):
        solve_problem(p, p.initial_mesh(1), 1, "fem")
