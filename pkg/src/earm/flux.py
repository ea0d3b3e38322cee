"""Equilibrated flux recovery.

The recovered flux is ``sigma_hat = sigma_tilde + sigma_delta`` where
``sigma_tilde`` is the weighted averaging flux of ``u_h`` and the correction
``sigma_delta`` is

* explicit for interior-penalty DG solutions (penalty jumps on the facets,
  adjoint-consistency jumps in the interior moments), or
* ``S(w)`` for conforming solutions, where ``w`` solves a facet-jump problem
  in a constrained DG space.

In both cases ``(div sigma_hat - f, v)_K = 0`` for all ``v`` in ``P_s(K)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DIRICHLET, INTERIOR, NEUMANN, Mesh2D
from .problems import CoefficientField, FacetWeights, ProblemSpec, facet_weights
from .quadrature import line_rule, triangle_rule
from .solvers import DgParameters, SolverError, facet_data_order, source_order
from .spaces import (FeFunction, LagrangeSpace, RtFlux, RtSpace, element_facet_reverse,
                     facet_points, facet_ref_points, interior_moments, interior_test,
                     legendre_facet, orthonormal_basis, physical_points)


class ConservationError(RuntimeError):
    """Local conservation check failed."""


class ConstrainedSpaceError(RuntimeError):
    """The jump Gram matrix is not positive definite."""


def _facet_q(mesh: Mesh2D, t: np.ndarray, s: int, facets=None) -> np.ndarray:
    """``q_j(t)`` on each facet, ``(nF, nq, s+1)``; orthonormal in ``L2(F)``."""
    h = mesh.facet_length if facets is None else mesh.facet_length[facets]
    return legendre_facet(t, s)[None] / np.sqrt(h)[:, None, None]


def _facet_moments(mesh: Mesh2D, vals: np.ndarray, t, w, s: int, facets=None) -> np.ndarray:
    """``int_F vals q_j ds`` from values at facet points ``(nF, nq)``."""
    h = mesh.facet_length if facets is None else mesh.facet_length[facets]
    return np.einsum("fq,q,fqj->fj", vals * h[:, None], w, _facet_q(mesh, t, s, facets))


def dg_jump_with_data(u: FeFunction, problem: ProblemSpec | None, t: np.ndarray) -> np.ndarray:
    """``[u]`` on all facets with ``u - g_D`` on Dirichlet facets; zero on Neumann facets."""
    m = u.space.mesh
    vm, vp = u.facet_traces(t)
    interior = m.facet_class == INTERIOR
    j = np.where(interior[:, None], vm - vp, vm)
    dmask = m.facet_class == DIRICHLET
    if problem is not None and dmask.any():
        x = facet_points(m, t, np.flatnonzero(dmask))
        j[dmask] -= np.asarray(problem.dirichlet(x[..., 0], x[..., 1]), dtype=float)
    j[m.facet_class == NEUMANN] = 0.0
    return j


def neumann_moments(mesh: Mesh2D, problem: ProblemSpec, s: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Neumann facets and the moments of ``g`` against ``P_s(F)`` (so ``g -> g_{s,F}``).

    Uses the same facet rule as the assembly of the degree-``k`` solve.
    """
    F = np.flatnonzero(mesh.facet_class == NEUMANN)
    if len(F) == 0 or problem.g is None:
        return F, np.zeros((len(F), s + 1))
    t, w = line_rule(facet_data_order(k))
    x = facet_points(mesh, t, F)
    gv = np.asarray(problem.g(x[..., 0], x[..., 1]), dtype=float)
    return F, _facet_moments(mesh, gv, t, w, s, F)


def averaging_flux(u: FeFunction, s: int, problem: ProblemSpec, coeff: CoefficientField | None = None,
                   weights: FacetWeights | None = None) -> RtFlux:
    """Weighted averaging flux of ``u`` in ``RT_s``."""
    m, k = u.space.mesh, u.space.degree
    if s < 0 or s > max(k, 0):
        raise ValueError(f"averaging degree {s} out of range for k = {k}")
    coeff = coeff or problem.coefficient(m)
    weights = weights or facet_weights(m, coeff)
    V = RtSpace(m, s)
    out = np.zeros(V.ndofs)
    t, w = line_rule(max(k + s + 1, 1))
    fm, fp = u.facet_flux_traces(t, coeff.A)
    avg = weights.omega_minus[:, None] * fm + weights.omega_plus[:, None] * fp
    mom = -_facet_moments(m, avg, t, w, s)
    FN, gm = neumann_moments(m, problem, s, k)
    mom[FN] = gm
    out[V.facet_dofs()] = mom
    if s >= 1:
        pts, wq = triangle_rule(max(k - 1 + s, 1))
        flux = -np.einsum("eij,epj->epi", coeff.A, u.grad(pts))
        out[V.interior_dofs()] = interior_moments(m, flux, pts, wq, s)
    return RtFlux(V, out)


def dg_correction_flux(u: FeFunction, s: int, params: DgParameters, problem: ProblemSpec,
                       coeff: CoefficientField | None = None,
                       weights: FacetWeights | None = None) -> RtFlux:
    """Explicit correction for an interior-penalty DG solution.

    Facet moments are ``gamma alpha_min / h_F int_F [u] q_j``; interior
    moments are ``delta sum_F int_F {A psi . n_F}_w [u]`` (sign matching the
    ``-delta`` adjoint term of the bilinear form).
    """
    m, k = u.space.mesh, u.space.degree
    coeff = coeff or problem.coefficient(m)
    weights = weights or facet_weights(m, coeff)
    V = RtSpace(m, s)
    out = np.zeros(V.ndofs)
    t, w = line_rule(facet_data_order(k))  # same rule as the Dirichlet terms of the solve
    j = dg_jump_with_data(u, problem, t)
    pen = params.gamma * weights.alpha_min / m.facet_length
    out[V.facet_dofs()] = pen[:, None] * _facet_moments(m, j, t, w, s)
    if s >= 1 and params.delta != 0:
        ef = m.element_facets
        rev = element_facet_reverse(m)
        nK = m.num_elements
        loc = np.tile(np.arange(3), nK)
        rp = facet_ref_points(loc, t, rev.ravel()).reshape(nK, 3, len(t), 2)
        psi = interior_test(rp, s)  # (nK, 3, nq, M, 2)
        psi = np.einsum("efqmc,ecd->efqmd", psi, m.inv_jac)
        An = np.einsum("eij,efj->efi", coeff.A, m.facet_normal[ef])
        is_minus = m.facet_elements[ef, 0] == np.arange(nK)[:, None]
        omega = np.where(is_minus, weights.omega_minus[ef], weights.omega_plus[ef])
        wt = omega * m.facet_length[ef]  # Neumann facets carry j = 0
        val = np.einsum("efqmd,efd,efq,q,ef->em", psi, An, j[ef], w, wt)
        out[V.interior_dofs()] = params.delta * val
    return RtFlux(V, out)


def test_basis(pts: np.ndarray, s: int, mesh: Mesh2D) -> np.ndarray:
    """``L2(K)``-orthonormal basis of ``P_s(K)`` at reference points, ``(nK, np, n)``."""
    return orthonormal_basis(pts, s)[None] / np.sqrt(mesh.det)[:, None, None]


def residual_functional(sigma: RtFlux, problem: ProblemSpec, s: int, k: int | None = None,
                        order: int | None = None) -> np.ndarray:
    """``r_K(v) = (f - div sigma, v)_K`` for the orthonormal ``P_s(K)`` basis, ``(nK, dim P_s)``.

    ``(f, v)`` uses the source rule of a degree-``k`` solve (default ``k = s + 1``).
    """
    m = sigma.space.mesh
    k = max(s + 1, sigma.space.degree + 1) if k is None else k
    pts, w = triangle_rule(order or source_order(k))
    x = physical_points(m, pts)
    fv = np.asarray(problem.f(x[..., 0], x[..., 1]), dtype=float)
    d = sigma.divergence(pts)
    v = test_basis(pts, s, m)
    return np.einsum("ep,p,epn->en", (fv - d) * m.det[:, None], w, v)


# ---------------------------------------------------------------------------
# conforming recovery: constrained jump space
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ConstrainedJumpSpace:
    """DG(s) with one copy of every continuous non-Dirichlet node removed.

    Removed: interior nodes; the plus-side copy of edge nodes on interior
    facets; the edge nodes of Neumann facets; at every vertex off the closed
    Dirichlet boundary, the copy on the anchor element (lowest index among the
    elements with maximal coefficient). The free part is a complement of
    ``CG_{0,Gamma_D}(s)`` in ``DG(s)``, so the jump norm is a norm on it.
    """

    space: LagrangeSpace
    free: np.ndarray
    anchors: np.ndarray

    @property
    def ndofs(self) -> int:
        return len(self.free)

    def extend(self, x: np.ndarray) -> FeFunction:
        full = np.zeros(self.space.ndofs)
        full[self.free] = x
        return FeFunction(self.space, full)


def build_constrained_space(mesh: Mesh2D, coeff: CoefficientField, s: int) -> ConstrainedJumpSpace:
    from .mesh import patch_anchors

    space = LagrangeSpace(mesh, s, "dg")
    anchors = patch_anchors(mesh, coeff.lam_max)
    if s == 0:
        return ConstrainedJumpSpace(space, np.arange(space.ndofs), anchors)
    nK = mesh.num_elements
    keep = np.ones((nK, space.nloc), dtype=bool)
    keep[:, space.kind == 2] = False
    ef = mesh.element_facets
    plus = mesh.facet_elements[ef, 1] == np.arange(nK)[:, None]
    neu = mesh.facet_class[ef] == NEUMANN
    for n in np.flatnonzero(space.kind == 1):
        i = space.where[n]
        keep[plus[:, i] | neu[:, i], n] = False
    on_d = np.zeros(mesh.num_vertices, dtype=bool)
    on_d[mesh.dirichlet_vertices] = True
    for n in np.flatnonzero(space.kind == 0):
        z = mesh.triangles[:, space.where[n]]
        keep[(anchors[z] == np.arange(nK)) & ~on_d[z], n] = False
    free = space.dof_map[keep]
    return ConstrainedJumpSpace(space, np.sort(free), anchors)


def jump_gram(space: LagrangeSpace, weights: FacetWeights, facets=None) -> sp.csr_matrix:
    """``sum_F A_F / h_F int_F [phi_i][phi_j]`` over non-Neumann facets."""
    m, s = space.mesh, space.degree
    F = np.flatnonzero(m.facet_class != NEUMANN) if facets is None else facets
    t, w = line_rule(2 * s + 1)
    from .spaces import facet_side
    interior = m.facet_class[F] == INTERIOR
    sgn = [np.ones(len(F)), np.where(interior, -1.0, 0.0)]
    data = []
    for side in (0, 1):
        fs = facet_side(m, side)
        data.append((fs.element[F], space.ref_basis(fs.ref_points(t)[F]), fs.valid[F]))
    c = weights.A_F[F]  # int [..] ds / h_F = sum_q w_q [..]
    rows, cols, vals = [], [], []
    for a in (0, 1):
        Ka, pa, va = data[a]
        for b in (0, 1):
            Kb, pb, vb = data[b]
            sel = va & vb
            blk = np.einsum("fqi,q,fqj->fij", pa[sel], w, pb[sel]) * (c * sgn[a] * sgn[b])[sel, None, None]
            rows.append(np.broadcast_to(space.dof_map[Ka[sel]][:, :, None], blk.shape).ravel())
            cols.append(np.broadcast_to(space.dof_map[Kb[sel]][:, None, :], blk.shape).ravel())
            vals.append(blk.ravel())
    n = space.ndofs
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def spd_factor(G: sp.spmatrix):
    """Symmetric LU without pivoting; positive pivots certify positive definiteness.

    Returns the factor; raises ``ConstrainedSpaceError`` otherwise.
    """
    G = sp.csc_matrix(G)
    if G.shape[0] == 0:
        return None
    asym = abs(G - G.T).max() if G.nnz else 0.0
    if asym > 1e-12 * abs(G).max():
        raise ConstrainedSpaceError(f"jump Gram matrix not symmetric ({asym:.2e})")
    try:
        # minimum degree on A^T + A stalls on strongly graded patches; COLAMD does not
        lu = spla.splu(G, permc_spec="COLAMD", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise ConstrainedSpaceError(f"jump Gram matrix is singular: {exc}") from exc
    piv = lu.U.diagonal()
    if not (np.array_equal(lu.perm_r, lu.perm_c) and np.all(piv > 0)):
        raise ConstrainedSpaceError(
            f"jump Gram matrix is not positive definite (min pivot {piv.min():.3e})")
    return lu


@dataclass(eq=False)
class JumpSolution:
    space: ConstrainedJumpSpace
    w: FeFunction
    rhs: np.ndarray
    gram_min_pivot: float
    residual: float


def on_earm_solve(u: FeFunction, s: int, problem: ProblemSpec, sigma_tilde: RtFlux,
                  coeff: CoefficientField | None = None, weights: FacetWeights | None = None,
                  tol: float = 1e-12) -> JumpSolution:
    """Solve the constrained facet-jump problem ``A([w], [v]) = r(v)``."""
    m = u.space.mesh
    coeff = coeff or problem.coefficient(m)
    weights = weights or facet_weights(m, coeff)
    cs = build_constrained_space(m, coeff, s)
    G = jump_gram(cs.space, weights)[cs.free][:, cs.free]
    # r(phi) for nodal basis functions of DG(s)
    pts, wq = triangle_rule(source_order(u.space.degree))
    x = physical_points(m, pts)
    fv = np.asarray(problem.f(x[..., 0], x[..., 1]), dtype=float)
    d = sigma_tilde.divergence(pts)
    r_loc = m.det[:, None] * (((fv - d) * wq) @ cs.space.ref_basis(pts))
    r = r_loc.ravel()[cs.free]
    lu = spd_factor(G)
    if lu is None:
        x_ = np.zeros(0)
        res, minpiv = 0.0, np.inf
    else:
        minpiv = float(lu.U.diagonal().min())
        x_ = lu.solve(r)
        nr = np.linalg.norm(r)
        res = np.linalg.norm(r - G @ x_) / nr if nr > 0 else 0.0
        for _ in range(5):
            if res <= tol:
                break
            x_ = x_ + lu.solve(r - G @ x_)
            res = np.linalg.norm(r - G @ x_) / nr
        if res > tol:
            raise SolverError("jump system did not reach the requested tolerance", res)
    return JumpSolution(cs, cs.extend(x_), r, minpiv, res)


def jump_to_flux(w: FeFunction, weights: FacetWeights) -> RtFlux:
    """``S(w)``: facet moments ``A_F / h_F int_F [w] q_j`` off Neumann facets, no interior moments."""
    m, s = w.space.mesh, w.space.degree
    t, wq = line_rule(2 * s + 1)
    j = dg_jump_with_data(w, None, t)
    V = RtSpace(m, s)
    out = np.zeros(V.ndofs)
    out[V.facet_dofs()] = (weights.A_F / m.facet_length)[:, None] * _facet_moments(m, j, t, wq, s)
    return RtFlux(V, out)


def triple_norm(w: FeFunction, weights: FacetWeights) -> float:
    """``sqrt(sum_F A_F / h_F ||[w]||_F^2)`` over non-Neumann facets."""
    t, wq = line_rule(2 * w.space.degree + 1)
    j = dg_jump_with_data(w, None, t)
    return float(np.sqrt(np.sum(weights.A_F * (j ** 2 @ wq))))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RecoveredFlux:
    sigma_tilde: RtFlux
    sigma_delta: RtFlux
    sigma_hat: RtFlux
    s: int
    averaging_degree: int
    mode: str
    k: int
    jump: JumpSolution | None = None
    report: dict = field(default_factory=dict)


def recover(u: FeFunction, problem: ProblemSpec, s: int | None = None, mode: str | None = None,
            averaging_degree: str | int = "k-1", params: DgParameters | None = None,
            coeff: CoefficientField | None = None, weights: FacetWeights | None = None,
            check: bool = True) -> RecoveredFlux:
    """Recover an equilibrated flux from a CG or DG solution.

    ``averaging_degree`` is ``"s"``, ``"k-1"`` or an integer; the averaging
    flux degree is never below ``s``.
    """
    m, k = u.space.mesh, u.space.degree
    mode = mode or u.space.continuity
    if mode not in ("cg", "dg"):
        raise ValueError(f"unknown recovery mode {mode!r}")
    if mode != u.space.continuity:
        raise ValueError(f"recovery mode {mode} does not match a {u.space.continuity} solution")
    smax = k - 1 if mode == "cg" else k
    s = smax if s is None else int(s)
    if not 0 <= s <= smax:
        raise ValueError(f"recovery degree s = {s} out of range 0..{smax} for {mode} k = {k}")
    if averaging_degree == "s":
        sa = s
    elif averaging_degree == "k-1":
        sa = max(s, k - 1)
    else:
        sa = max(s, int(averaging_degree))
    coeff = coeff or problem.coefficient(m)
    weights = weights or facet_weights(m, coeff)
    st = averaging_flux(u, sa, problem, coeff, weights)
    jump = None
    if mode == "dg":
        if params is None:
            raise ValueError("DG recovery needs the DG parameters used for the solve")
        sd = dg_correction_flux(u, s, params, problem, coeff, weights)
    else:
        jump = on_earm_solve(u, s, problem, st, coeff, weights)
        sd = jump_to_flux(jump.w, weights)
    sh = st + sd
    out = RecoveredFlux(st, sd, sh, s, sa, mode, k, jump)
    if check:
        out.report = check_recovery(out, problem)
    return out


def conservation_residuals(rec: RecoveredFlux, problem: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    """Absolute and scaled per-element conservation residuals.

    Scaled: ``max_v |(div sigma_hat - f, v)_K|`` over ``L2(K)``-orthonormal ``v``
    in ``P_s(K)``, divided by ``||f||_K + ||div sigma_tilde||_K +
    ||div sigma_delta||_K + ||sigma_hat||_K / h_K``.
    """
    m = rec.sigma_hat.space.mesh
    pts, w = triangle_rule(source_order(rec.k))
    r = residual_functional(rec.sigma_hat, problem, rec.s, rec.k)
    absres = np.abs(r).max(axis=1)
    x = physical_points(m, pts)
    fv = np.asarray(problem.f(x[..., 0], x[..., 1]), dtype=float)

    def l2(v):
        return np.sqrt(np.maximum((v ** 2 * w).sum(1) * m.det, 0.0))

    sh = rec.sigma_hat.eval(pts)
    scale = (l2(fv) + l2(rec.sigma_tilde.divergence(pts)) + l2(rec.sigma_delta.divergence(pts))
             + l2(np.hypot(sh[..., 0], sh[..., 1])) / m.h)
    scaled = np.where(scale > 0, absres / np.where(scale > 0, scale, 1.0), absres)
    return absres, scaled


def conformity_defect(flux: RtFlux) -> float:
    """Max mismatch of two-sided normal traces over interior facets.

    Each facet is measured against the largest field magnitude seen on it
    from either side.
    """
    m = flux.space.mesh
    t, _ = line_rule(2 * flux.space.degree + 1)
    vm, vp = flux.facet_values(t)
    inter = m.facet_class == INTERIOR
    if not inter.any():
        return 0.0
    n = m.facet_normal[inter]
    d = np.abs(np.einsum("fpc,fc->fp", vm[inter] - vp[inter], n)).max(axis=1)
    scale = np.maximum(np.linalg.norm(vm[inter], axis=2), np.linalg.norm(vp[inter], axis=2)).max(axis=1)
    return float(np.where(scale > 0, d / np.where(scale > 0, scale, 1.0), d).max())


def neumann_defect(rec: RecoveredFlux, problem: ProblemSpec) -> float:
    m = rec.sigma_hat.space.mesh
    FN, gs = neumann_moments(m, problem, rec.s, rec.k)
    if len(FN) == 0:
        return 0.0
    got = rec.sigma_hat.values[rec.sigma_hat.space.facet_dofs(FN)]
    return float(np.abs(got[:, :rec.s + 1] - gs).max())


def check_recovery(rec: RecoveredFlux, problem: ProblemSpec) -> dict:
    absres, scaled = conservation_residuals(rec, problem)
    worst = int(np.argmax(scaled))
    rep = dict(max_conservation=float(scaled.max()), max_conservation_abs=float(absres.max()),
               worst_element=worst, conformity=conformity_defect(rec.sigma_hat),
               neumann=neumann_defect(rec, problem))
    if rec.jump is not None:
        rep["gram_min_pivot"] = rec.jump.gram_min_pivot
        rep["jump_residual"] = rec.jump.residual
    return rep
