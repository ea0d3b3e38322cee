"""Equilibrated error indicators, true energy errors and data oscillation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .flux import RecoveredFlux
from .mesh import INTERIOR, Mesh2D
from .problems import CoefficientField, ProblemSpec
from .quadrature import MAX_ORDER, line_rule, triangle_rule
from .spaces import FeFunction, facet_points, l2_project, physical_points


@dataclass(eq=False)
class IndicatorField:
    eta_K: np.ndarray
    osc_K: np.ndarray
    err_K: np.ndarray | None = None
    error: float | None = None

    @property
    def eta(self) -> float:
        return float(np.sqrt(np.sum(self.eta_K ** 2)))

    @property
    def osc(self) -> float:
        return float(np.sqrt(np.sum(self.osc_K ** 2)))

    @property
    def efficiency(self) -> float | None:
        if self.error is None or self.error == 0:
            return None
        return self.eta / self.error


def indicators(u: FeFunction, rec: RecoveredFlux, coeff: CoefficientField) -> np.ndarray:
    """``eta_K = ||A^{-1/2} sigma_hat + A^{1/2} grad u_h||_K``."""
    m = u.space.mesh
    deg = max(rec.sigma_hat.space.degree + 1, u.space.degree - 1)
    pts, w = triangle_rule(max(2 * deg, 1))
    sig = rec.sigma_hat.eval(pts)
    g = u.grad(pts)
    r = np.einsum("eij,epj->epi", coeff.inv_sqrt_A, sig) + np.einsum("eij,epj->epi", coeff.sqrt_A, g)
    return np.sqrt(m.det * np.einsum("epi,epi,p->e", r, r, w))


def oscillation(problem: ProblemSpec, s: int, mesh: Mesh2D, order: int | None = None) -> np.ndarray:
    """``h_K ||f - f_s||_K`` with ``f_s`` the elementwise ``L2`` projection."""
    order = order or 2 * s + 8
    fs = l2_project(problem.f, mesh, s, order)
    pts, w = triangle_rule(order)
    x = physical_points(mesh, pts)
    d = np.asarray(problem.f(x[..., 0], x[..., 1]), dtype=float) - fs.eval(pts)
    return mesh.h * np.sqrt(mesh.det * ((d ** 2) @ w))


def _touches(mesh: Mesh2D, point) -> np.ndarray:
    if point is None:
        return np.zeros(mesh.num_elements, dtype=bool)
    v = mesh.vertices[mesh.triangles]
    return np.any(np.all(np.isclose(v, np.asarray(point)[None, None, :], rtol=0, atol=1e-300), axis=2), axis=1)


def element_errors(u: FeFunction, problem: ProblemSpec, coeff: CoefficientField,
                   order: int | None = None) -> np.ndarray:
    """Elementwise ``||A^{1/2} grad(u - u_h)||_K`` by direct quadrature.

    Elements touching the singular point get the highest available order;
    accurate only away from the singularity.
    """
    m, k = u.space.mesh, u.space.degree
    out = np.empty(m.num_elements)
    near = _touches(m, problem.singular_point)
    for sel, o in ((~near, order or 2 * k + 6), (near, MAX_ORDER)):
        e = np.flatnonzero(sel)
        if len(e) == 0:
            continue
        pts, w = triangle_rule(o)
        x = physical_points(m, pts, e)
        gu = np.moveaxis(np.asarray(problem.grad_u(x[..., 0], x[..., 1])), 0, -1)
        d = gu - u.grad(pts, e)
        out[e] = np.sqrt(m.det[e] * np.einsum("epi,eij,epj,p->e", d, coeff.A[e], d, w))
    return out


def discrete_energy_sq(u: FeFunction, coeff: CoefficientField) -> float:
    m, k = u.space.mesh, u.space.degree
    pts, w = triangle_rule(max(2 * k - 2, 1))
    g = u.grad(pts)
    return float(np.sum(m.det * np.einsum("epi,eij,epj,p->e", g, coeff.A, g, w)))


def _cross_term(u: FeFunction, problem: ProblemSpec) -> float:
    """``sum_K (A grad u, grad u_h)_K`` for ``f = 0``, as ``sum_F int_F A grad u . n_F [u_h]``.

    Facets through the singular point are integrated adaptively.
    """
    m, k = u.space.mesh, u.space.degree
    F = np.flatnonzero((m.facet_class != INTERIOR) | (u.space.continuity == "dg"))
    sp = problem.singular_point
    if sp is not None:
        a, b = m.vertices[m.facets[F, 0]], m.vertices[m.facets[F, 1]]
        sing = np.all(a == sp, axis=1) | np.all(b == sp, axis=1)
    else:
        sing = np.zeros(len(F), dtype=bool)
    t, w = line_rule(min(2 * k + 14, MAX_ORDER))
    reg = F[~sing]
    vm, vp = u.facet_traces(t)
    jmp = np.where((m.facet_class == INTERIOR)[:, None], vm - vp, vm)
    x = facet_points(m, t, reg)
    n = np.repeat(m.facet_normal[reg][:, None, :], len(t), axis=1)
    fl = problem.normal_flux(x.reshape(-1, 2), n.reshape(-1, 2)).reshape(len(reg), len(t))
    total = float(np.sum(m.facet_length[reg] * ((fl * jmp[reg]) @ w)))
    for f in F[sing]:
        # u_h restricted to the facet is a polynomial in t; fit it from the traces
        coeffs = np.polynomial.legendre.legfit(2 * t - 1, jmp[f], k)
        p0, p1 = m.vertices[m.facets[f, 0]], m.vertices[m.facets[f, 1]]
        nrm = m.facet_normal[f]
        flip = bool(np.all(p1 == sp))  # parametrise from the singular end

        # t = s^10 removes the r^(beta - 1) endpoint singularity for beta >= 0.1
        a, b = (p1, p0) if flip else (p0, p1)

        def integrand(ss):
            d = ss ** 10
            tt = 1.0 - d if flip else d
            x_ = (a + d * (b - a))[None, :]
            return float(problem.normal_flux(x_, nrm[None, :])[0]
                         * np.polynomial.legendre.legval(2 * tt - 1, coeffs)) * 10 * ss ** 9
        val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-16, epsrel=1e-12, limit=400)
        total += val * m.facet_length[f]
    return total


def energy_error(u: FeFunction, problem: ProblemSpec, coeff: CoefficientField) -> float | None:
    """Global ``||A^{1/2} grad_h (u - u_h)||``.

    For source-free problems with a known exact energy the identity
    ``|u - u_h|^2 = a(u, u) - 2 a(u, u_h) + a(u_h, u_h)`` is used, where the
    cross term reduces to facet integrals of ``A grad u . n`` against the
    jumps of ``u_h``; this avoids quadrature of the singular gradient.
    """
    if problem.grad_u is None:
        return None
    Eu = problem.energy_norm_sq
    if problem.source_free and Eu is not None:
        e2 = Eu - 2 * _cross_term(u, problem) + discrete_energy_sq(u, coeff)
        return float(np.sqrt(max(e2, 0.0)))
    return float(np.sqrt(np.sum(element_errors(u, problem, coeff) ** 2)))


def exact_energy(problem: ProblemSpec, mesh: Mesh2D | None = None) -> float | None:
    """``||A^{1/2} grad u||`` from the boundary identity, or by quadrature on ``mesh``."""
    if problem.energy_norm_sq is not None:
        return float(np.sqrt(problem.energy_norm_sq))
    if problem.grad_u is None or mesh is None:
        return None
    coeff = problem.coefficient(mesh)
    pts, w = triangle_rule(16)
    x = physical_points(mesh, pts)
    g = np.moveaxis(np.asarray(problem.grad_u(x[..., 0], x[..., 1])), 0, -1)
    return float(np.sqrt(np.sum(mesh.det * np.einsum("epi,eij,epj,p->e", g, coeff.A, g, w))))


def estimate(u: FeFunction, rec: RecoveredFlux, problem: ProblemSpec, coeff: CoefficientField,
             with_error: bool = True, per_element_error: bool = False) -> IndicatorField:
    eta_K = indicators(u, rec, coeff)
    osc_K = oscillation(problem, rec.s, u.space.mesh)
    err = energy_error(u, problem, coeff) if with_error else None
    err_K = element_errors(u, problem, coeff) if per_element_error and problem.grad_u is not None else None
    return IndicatorField(eta_K, osc_K, err_K, err)
