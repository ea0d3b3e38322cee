"""Assembly of the conforming and interior-penalty DG systems, and the sparse solve.

DG bilinear form (``delta = 1`` gives the symmetric variant)::

    a(u, v) = (A grad u, grad v)
              - sum_F int_F {A grad u . n_F}_w [v]
              - delta sum_F int_F {A grad v . n_F}_w [u]
              + sum_F gamma alpha_min / h_F int_F [u][v]

with sums over interior and Dirichlet facets. Dirichlet data enters through
``[u] -> u - g_D`` on Dirichlet facets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .mesh import DIRICHLET, INTERIOR, NEUMANN
from .problems import CoefficientField, FacetWeights, ProblemSpec, facet_weights
from .quadrature import line_rule, triangle_rule
from .spaces import FeFunction, LagrangeSpace, facet_points, facet_side, physical_points

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg: str, residual: float = float("nan")):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DgParameters:
    gamma: float
    delta: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"penalty gamma must be positive, got {self.gamma}")
        if self.delta not in (-1, 0, 1):
            raise ValueError(f"delta must be -1, 0 or 1, got {self.delta}")

    @classmethod
    def default(cls, k: int, gamma: float | None = None, delta: int = 1) -> "DgParameters":
        return cls(10.0 * k * k if gamma is None else float(gamma), int(delta))


@dataclass(eq=False)
class SparseSystem:
    space: LagrangeSpace
    matrix: sp.csr_matrix
    rhs: np.ndarray
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    coefficient: CoefficientField | None = None
    weights: FacetWeights | None = None
    params: DgParameters | None = None

    def reduced(self):
        """Free-DOF matrix and right-hand side after symmetric elimination."""
        n = self.matrix.shape[0]
        free = np.ones(n, dtype=bool)
        free[self.fixed_dofs] = False
        A = self.matrix
        b = self.rhs.copy()
        if len(self.fixed_dofs):
            xD = np.zeros(n)
            xD[self.fixed_dofs] = self.fixed_values
            b = b - A @ xD
        idx = np.flatnonzero(free)
        return A[idx][:, idx].tocsc(), b[idx], idx


def _coo_sum(rows, cols, vals, n) -> sp.csr_matrix:
    M = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    return M.tocsr()


def _volume_blocks(space: LagrangeSpace, coeff: CoefficientField) -> np.ndarray:
    """Element stiffness ``(nK, nloc, nloc)`` via a reference tensor."""
    m, k = space.mesh, space.degree
    pts, w = triangle_rule(max(2 * k - 2, 1))
    g = space.ref_grad(pts)  # (np, n, 2)
    G = np.einsum("p,pic,pjd->cdij", w, g, g)
    B = np.einsum("eac,ecd,ebd->eab", m.inv_jac, coeff.A, m.inv_jac)
    return m.det[:, None, None] * np.einsum("ecd,cdij->eij", B, G)


def _load(space: LagrangeSpace, f, order: int) -> np.ndarray:
    m = space.mesh
    pts, w = triangle_rule(order)
    x = physical_points(m, pts)
    fv = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
    loc = m.det[:, None] * ((fv * w) @ space.ref_basis(pts))
    return np.bincount(space.dof_map.ravel(), loc.ravel(), minlength=space.ndofs)


def _neumann_load(space: LagrangeSpace, g, order: int) -> np.ndarray:
    m = space.mesh
    F = np.flatnonzero(m.facet_class == NEUMANN)
    out = np.zeros(space.ndofs)
    if len(F) == 0 or g is None:
        return out
    t, w = line_rule(order)
    fs = facet_side(m, 0)
    K = fs.element[F]
    phi = space.ref_basis(fs.ref_points(t)[F])  # (nF, nq, n)
    x = facet_points(m, t, F)
    gv = np.asarray(g(x[..., 0], x[..., 1]), dtype=float)
    loc = m.facet_length[F, None] * np.einsum("fq,q,fqn->fn", gv, w, phi)
    np.add.at(out, space.dof_map[K], loc)
    return out


def assemble_cg(space: LagrangeSpace, problem: ProblemSpec, coeff: CoefficientField | None = None,
                quad_order: int | None = None) -> SparseSystem:
    if space.continuity != "cg":
        raise ValueError("assemble_cg needs a continuous space")
    m, k = space.mesh, space.degree
    coeff = coeff or problem.coefficient(m)
    Ke = _volume_blocks(space, coeff)
    dm = space.dof_map
    rows = np.broadcast_to(dm[:, :, None], Ke.shape)
    cols = np.broadcast_to(dm[:, None, :], Ke.shape)
    A = _coo_sum(rows, cols, Ke, space.ndofs)
    b = (_load(space, problem.f, quad_order or source_order(k))
         - _neumann_load(space, problem.g, facet_data_order(k)))
    D = space.dirichlet_dofs
    x = space.dof_coordinates[D]
    vals = np.asarray(problem.dirichlet(x[:, 0], x[:, 1]), dtype=float)
    return SparseSystem(space, A, b, D, vals, coefficient=coeff)


def dg_facet_data(space: LagrangeSpace, coeff: CoefficientField, t: np.ndarray, facets: np.ndarray):
    """Per side: elements, basis traces ``(nF, nq, n)`` and ``A grad phi . n_F``."""
    m = space.mesh
    out = []
    for side in (0, 1):
        fs = facet_side(m, side)
        K = fs.element[facets]
        rp = fs.ref_points(t)[facets]
        phi = space.ref_basis(rp)
        g = np.einsum("fqnc,fcd->fqnd", space.ref_grad(rp), m.inv_jac[K])
        An = np.einsum("fij,fi->fj", coeff.A[K], m.facet_normal[facets])  # A n (A symmetric)
        flux = np.einsum("fqnd,fd->fqn", g, An)
        out.append((K, phi, flux, fs.valid[facets]))
    return out


def assemble_dg(space: LagrangeSpace, problem: ProblemSpec, params: DgParameters,
                weights: FacetWeights | None = None, coeff: CoefficientField | None = None,
                quad_order: int | None = None) -> SparseSystem:
    if space.continuity != "dg":
        raise ValueError("assemble_dg needs a discontinuous space")
    m, k = space.mesh, space.degree
    coeff = coeff or problem.coefficient(m)
    weights = weights or facet_weights(m, coeff)
    gam, dl = params.gamma, params.delta

    rows_l, cols_l, vals_l = [], [], []
    Ke = _volume_blocks(space, coeff)
    dm = space.dof_map
    rows_l.append(np.broadcast_to(dm[:, :, None], Ke.shape))
    cols_l.append(np.broadcast_to(dm[:, None, :], Ke.shape))
    vals_l.append(Ke)

    F = np.flatnonzero(m.facet_class != NEUMANN)
    t, w = line_rule(facet_data_order(k))
    sides = dg_facet_data(space, coeff, t, F)
    interior = m.facet_class[F] == INTERIOR
    h = m.facet_length[F]
    pen = gam * weights.alpha_min[F] / h
    cj = [np.ones(len(F)), np.where(interior, -1.0, 0.0)]
    aw = [weights.omega_minus[F], np.where(interior, weights.omega_plus[F], 0.0)]
    W = (h[:, None] * w[None, :])
    for a in (0, 1):
        Ka, phia, fla, va = sides[a]
        for b in (0, 1):
            Kb, phib, flb, vb = sides[b]
            sel = va & vb
            if not sel.any():
                continue
            mm = _kernels.weighted_gram(phia[sel][..., None], phib[sel][..., None], W[sel])
            mf = _kernels.weighted_gram(phia[sel][..., None], flb[sel][..., None], W[sel])
            fm = _kernels.weighted_gram(fla[sel][..., None], phib[sel][..., None], W[sel])
            blk = ((pen * cj[a] * cj[b])[sel, None, None] * mm
                   - (cj[a] * aw[b])[sel, None, None] * mf
                   - dl * (cj[b] * aw[a])[sel, None, None] * fm)
            ra = dm[Ka[sel]]
            cb = dm[Kb[sel]]
            rows_l.append(np.broadcast_to(ra[:, :, None], blk.shape))
            cols_l.append(np.broadcast_to(cb[:, None, :], blk.shape))
            vals_l.append(blk)
    A = _coo_sum(np.concatenate([r.reshape(-1) for r in rows_l]),
                 np.concatenate([c.reshape(-1) for c in cols_l]),
                 np.concatenate([v.reshape(-1) for v in vals_l]), space.ndofs)

    b = (_load(space, problem.f, quad_order or source_order(k))
         - _neumann_load(space, problem.g, facet_data_order(k)))
    # Dirichlet data through penalty and adjoint-consistency terms
    dmask = m.facet_class[F] == DIRICHLET
    if dmask.any():
        FD = F[dmask]
        K, phi, fl, _ = (x[dmask] for x in sides[0])
        xq = facet_points(m, t, FD)
        gD = np.asarray(problem.dirichlet(xq[..., 0], xq[..., 1]), dtype=float)
        loc = np.einsum("fq,fqn->fn", W[dmask] * gD, pen[dmask, None, None] * phi - dl * fl)
        np.add.at(b, dm[K], loc)
    return SparseSystem(space, A, b, coefficient=coeff, weights=weights, params=params)


def source_order(k: int) -> int:
    """Element rule for data integrals; shared by assembly and recovery checks."""
    return 2 * k + 4


def facet_data_order(k: int) -> int:
    """Facet rule for boundary data; shared by assembly and flux moments."""
    return 2 * k + 2


def _relres(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return r / nb if nb > 0 else r


def solve_matrix(A, b, tol: float = 1e-12, backend: str = "direct", max_refine: int = 5):
    """Solve ``A x = b`` to relative residual ``tol``.

    ``direct`` uses SuperLU with iterative refinement and falls back to
    diagonally preconditioned CG when refinement stalls; ``cg`` starts with CG.
    Returns ``(x, relative_residual)``.
    """
    A = sp.csc_matrix(A)
    if np.linalg.norm(b) == 0:
        return np.zeros_like(b), 0.0
    x = None
    res = np.inf
    if backend == "direct":
        symmetric = A.nnz == 0 or abs(A - A.T).max() <= 1e-14 * abs(A).max()
        # symmetric systems come from SPD forms: diagonal pivots, symmetric ordering
        opts = dict(diag_pivot_thresh=0.0, options=dict(SymmetricMode=True)) if symmetric else {}
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", **opts)
        except RuntimeError as exc:
            raise SolverError(f"factorisation failed: {exc}") from exc
        x = lu.solve(b)
        res = _relres(A, x, b)
        for _ in range(max_refine):
            if res <= tol:
                break
            x = x + lu.solve(b - A @ x)
            new = _relres(A, x, b)
            if not new < res:
                res = new
                break
            res = new
        if not np.isfinite(res):
            raise SolverError("direct solve produced non-finite values", res)
    elif backend != "cg":
        raise ValueError(f"unknown solver backend {backend!r}")
    if res > tol:
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("matrix not positive on the diagonal; cannot run CG", res)
        Minv = sp.diags(1.0 / d)
        x0 = x if x is not None else np.zeros_like(b)
        x, info = spla.cg(A, b, x0=x0, rtol=tol * 0.5, atol=0.0, maxiter=20 * len(b), M=Minv)
        res = _relres(A, x, b)
        if res > tol:
            raise SolverError("linear solve did not reach the requested tolerance", res)
    return x, res


def solve(system: SparseSystem, tol: float = 1e-12, backend: str = "direct") -> FeFunction:
    A, b, free = system.reduced()
    x = np.zeros(system.matrix.shape[0])
    x[system.fixed_dofs] = system.fixed_values
    if len(free):
        xf, res = solve_matrix(A, b, tol, backend)
        x[free] = xf
    else:
        res = 0.0
    fn = FeFunction(system.space, x)
    fn.residual = res
    return fn


def solve_problem(problem: ProblemSpec, mesh, degree: int, discretization: str = "cg",
                  params: DgParameters | None = None, tol: float = 1e-12,
                  backend: str = "direct") -> tuple[FeFunction, SparseSystem]:
    if discretization == "cg":
        space = LagrangeSpace(mesh, degree, "cg")
        system = assemble_cg(space, problem)
    elif discretization == "dg":
        space = LagrangeSpace(mesh, degree, "dg")
        system = assemble_dg(space, problem, params or DgParameters.default(degree))
    else:
        raise ValueError(f"unknown discretization {discretization!r}")
    return solve(system, tol, backend), system
