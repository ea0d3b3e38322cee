"""Lagrange and Raviart-Thomas spaces on triangle meshes.

Reference triangle ``(0,0), (1,0), (0,1)``. Local facet ``i`` runs from
reference vertex ``i+1`` to ``i+2`` (mod 3). On the mesh, the global
parameter ``t`` of facet ``F = (a, b)`` runs from ``a`` to ``b``.

Raviart-Thomas fields are stored through their moments:

* facet moments ``int_F tau . n_F q_j`` with ``q_j`` the
  ``L2(F)``-orthonormal Legendre polynomials in ``t``;
* interior moments ``int_K tau . J^{-T} psi_m`` with ``psi_m`` an
  ``L2(K_ref)``-orthonormal basis of ``P_{s-1}^2``.

With these choices the local reference degrees of freedom do not depend on
the element shape (up to ``sqrt(h_F)`` and orientation factors), so one
reference dual matrix serves every element.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import eval_legendre

from .mesh import INTERIOR, Mesh2D
from .quadrature import line_rule, triangle_rule

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def dim_p(k: int) -> int:
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


@lru_cache(maxsize=None)
def monomial_exponents(k: int) -> tuple[tuple[int, int], ...]:
    return tuple((d - j, j) for d in range(k + 1) for j in range(d + 1))


def monomials(pts: np.ndarray, k: int) -> np.ndarray:
    """``pts[..., 2] -> [..., dim_p(k)]`` values of ``x^a y^b``."""
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([x ** a * y ** b for a, b in monomial_exponents(k)], axis=-1)


def monomial_grads(pts: np.ndarray, k: int) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    gx, gy = [], []
    for a, b in monomial_exponents(k):
        gx.append(a * x ** max(a - 1, 0) * y ** b if a else np.zeros_like(x))
        gy.append(b * x ** a * y ** max(b - 1, 0) if b else np.zeros_like(x))
    return np.stack([np.stack(gx, -1), np.stack(gy, -1)], axis=-1)


@lru_cache(maxsize=None)
def _orthonormal_coeffs(k: int) -> np.ndarray:
    """Monomial coefficients of an ``L2(K_ref)``-orthonormal basis of ``P_k``."""
    pts, w = triangle_rule(2 * k + 2)
    V = monomials(pts, k)
    M = V.T @ (w[:, None] * V)
    L = np.linalg.cholesky(M)
    return np.linalg.inv(L).T  # columns are basis functions


def orthonormal_basis(pts: np.ndarray, k: int) -> np.ndarray:
    """Reference-orthonormal basis of ``P_k`` evaluated at ``pts``."""
    if k < 0:
        return np.zeros(pts.shape[:-1] + (0,))
    return monomials(pts, k) @ _orthonormal_coeffs(k)


def legendre_facet(t: np.ndarray, s: int) -> np.ndarray:
    """``sqrt(2j+1) P_j(2t-1)`` for ``j = 0..s``; orthonormal on ``[0, 1]``."""
    t = np.asarray(t, dtype=float)
    return np.stack([np.sqrt(2 * j + 1) * eval_legendre(j, 2 * t - 1) for j in range(s + 1)], axis=-1)


def facet_ref_points(local_facet, t, reverse) -> np.ndarray:
    """Reference coordinates of facet parameter ``t`` on local facets.

    ``local_facet`` and ``reverse`` have shape ``(n,)``; ``t`` has ``(nt,)``.
    Returns ``(n, nt, 2)``.
    """
    i = np.asarray(local_facet)
    a = REF_VERTICES[(i + 1) % 3]
    b = REF_VERTICES[(i + 2) % 3]
    tau = np.where(np.asarray(reverse)[:, None], 1.0 - t[None, :], t[None, :])
    return a[:, None, :] + tau[..., None] * (b - a)[:, None, :]


@dataclass(frozen=True)
class FacetSide:
    """Element, local facet and orientation for one side of every facet."""

    element: np.ndarray
    local: np.ndarray
    reverse: np.ndarray
    valid: np.ndarray

    def ref_points(self, t: np.ndarray) -> np.ndarray:
        return facet_ref_points(self.local, t, self.reverse)


def facet_side(mesh: Mesh2D, side: int) -> FacetSide:
    K = mesh.facet_elements[:, side]
    valid = K >= 0
    Kc = np.where(valid, K, 0)
    loc = np.where(valid, mesh.facet_local[:, side], 0)
    start = mesh.triangles[Kc, (loc + 1) % 3]
    return FacetSide(Kc, loc, start != mesh.facets[:, 0], valid)


def element_facet_reverse(mesh: Mesh2D) -> np.ndarray:
    """``(nK, 3)`` True where local facet direction opposes the global one."""
    t = mesh.triangles
    start = np.stack([t[:, 1], t[:, 2], t[:, 0]], axis=1)
    return start != mesh.facets[mesh.element_facets, 0]


# ---------------------------------------------------------------------------
# Lagrange spaces
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def lagrange_reference(k: int):
    """Nodes, node kinds and monomial-to-nodal matrix for ``P_k``.

    Node order: vertices, then ``k-1`` nodes per local facet in local
    direction, then interior nodes. ``kind`` is 0 vertex, 1 facet, 2 interior;
    ``where`` is the vertex/facet index and ``pos`` the position on the facet.
    """
    if k == 0:
        nodes = np.array([[1 / 3, 1 / 3]])
        return nodes, np.array([2]), np.array([0]), np.array([0]), np.ones((1, 1))
    nodes, kind, where, pos = [], [], [], []
    for i in range(3):
        nodes.append(REF_VERTICES[i])
        kind.append(0), where.append(i), pos.append(0)
    for i in range(3):
        a, b = REF_VERTICES[(i + 1) % 3], REF_VERTICES[(i + 2) % 3]
        for j in range(1, k):
            nodes.append(a + j / k * (b - a))
            kind.append(1), where.append(i), pos.append(j - 1)
    for i in range(1, k):
        for j in range(1, k - i):
            nodes.append(np.array([i / k, j / k]))
            kind.append(2), where.append(0), pos.append(0)
    nodes = np.array(nodes)
    V = monomials(nodes, k)
    return nodes, np.array(kind), np.array(where), np.array(pos), np.linalg.inv(V)


class LagrangeSpace:
    """Continuous (``"cg"``) or discontinuous (``"dg"``) Lagrange space."""

    def __init__(self, mesh: Mesh2D, degree: int, continuity: str = "cg"):
        if continuity not in ("cg", "dg"):
            raise ValueError(f"continuity must be 'cg' or 'dg', got {continuity!r}")
        if degree < 0 or (continuity == "cg" and degree < 1):
            raise ValueError(f"invalid degree {degree} for {continuity}")
        self.mesh = mesh
        self.degree = degree
        self.continuity = continuity
        self.nodes, self.kind, self.where, self.pos, self._coef = lagrange_reference(degree)
        self.nloc = len(self.nodes)
        nK = mesh.num_elements
        if continuity == "dg":
            self.dof_map = np.arange(nK * self.nloc, dtype=np.int64).reshape(nK, self.nloc)
            self.ndofs = nK * self.nloc
        else:
            self.dof_map, self.ndofs = self._cg_numbering()

    def _cg_numbering(self):
        m, k = self.mesh, self.degree
        nV, nF, nK = m.num_vertices, m.num_facets, m.num_elements
        dm = np.empty((nK, self.nloc), dtype=np.int64)
        rev = element_facet_reverse(m)
        nint = dim_p(k - 3)
        for n in range(self.nloc):
            if self.kind[n] == 0:
                dm[:, n] = m.triangles[:, self.where[n]]
            elif self.kind[n] == 1:
                i, j = self.where[n], self.pos[n]
                jj = np.where(rev[:, i], k - 2 - j, j)
                dm[:, n] = nV + m.element_facets[:, i] * (k - 1) + jj
        if nint:
            cols = np.flatnonzero(self.kind == 2)
            dm[:, cols] = nV + nF * (k - 1) + np.arange(nK * nint).reshape(nK, nint)
        return dm, nV + nF * (k - 1) + nK * nint

    # -- reference basis ----------------------------------------------------
    def ref_basis(self, pts: np.ndarray) -> np.ndarray:
        return monomials(pts, self.degree) @ self._coef

    def ref_grad(self, pts: np.ndarray) -> np.ndarray:
        g = monomial_grads(pts, self.degree)
        return np.einsum("...mc,mn->...nc", g, self._coef)

    def phys_grad(self, pts: np.ndarray, elements=None) -> np.ndarray:
        """Physical basis gradients ``(nE, np, nloc, 2)`` at common reference points."""
        inv = self.mesh.inv_jac if elements is None else self.mesh.inv_jac[elements]
        return np.einsum("pnc,ecd->epnd", self.ref_grad(pts), inv)

    @cached_property
    def dof_coordinates(self) -> np.ndarray:
        m = self.mesh
        x = m.vertices[m.triangles[:, 0]][:, None, :] + np.einsum("eij,nj->eni", m.jac, self.nodes)
        out = np.empty((self.ndofs, 2))
        out[self.dof_map] = x
        return out

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        if self.continuity == "dg":
            return np.zeros(0, dtype=np.int64)
        m, k = self.mesh, self.degree
        from .mesh import DIRICHLET
        F = np.flatnonzero(m.facet_class == DIRICHLET)
        edge = (m.num_vertices + F[:, None] * (k - 1) + np.arange(k - 1)[None, :]).ravel()
        return np.unique(np.concatenate([m.dirichlet_vertices, edge])).astype(np.int64)

    def interpolate(self, func) -> "FeFunction":
        x = self.dof_coordinates
        return FeFunction(self, np.asarray(func(x[:, 0], x[:, 1]), dtype=float))

    def function(self, values=None) -> "FeFunction":
        return FeFunction(self, np.zeros(self.ndofs) if values is None else np.asarray(values, float))


@dataclass(eq=False)
class FeFunction:
    space: LagrangeSpace
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.space.ndofs,):
            raise ValueError(f"expected {self.space.ndofs} values, got {self.values.shape}")

    @property
    def local(self) -> np.ndarray:
        return self.values[self.space.dof_map]

    def _check(self, elements):
        if elements is None:
            return slice(None)
        e = np.asarray(elements)
        if e.size and (e.min() < 0 or e.max() >= self.space.mesh.num_elements):
            raise IndexError("element id out of range")
        return e

    def eval(self, ref_points: np.ndarray, elements=None) -> np.ndarray:
        """Values ``(nE, np)`` at common reference points."""
        e = self._check(elements)
        return self.local[e] @ self.space.ref_basis(ref_points).T

    def grad(self, ref_points: np.ndarray, elements=None) -> np.ndarray:
        """Physical gradients ``(nE, np, 2)``."""
        e = self._check(elements)
        gref = np.einsum("en,pnc->epc", self.local[e], self.space.ref_grad(ref_points))
        return np.einsum("epc,ecd->epd", gref, self.space.mesh.inv_jac[e])

    def eval_at(self, elements, ref_points) -> np.ndarray:
        """Values at per-element points ``ref_points[(n, np, 2)]``."""
        return np.einsum("epn,en->ep", self.space.ref_basis(ref_points), self.local[elements])

    def grad_at(self, elements, ref_points) -> np.ndarray:
        g = np.einsum("epnc,en->epc", self.space.ref_grad(ref_points), self.local[elements])
        return np.einsum("epc,ecd->epd", g, self.space.mesh.inv_jac[elements])

    def facet_traces(self, t: np.ndarray):
        """One-sided traces ``(minus, plus)`` on every facet at parameters ``t``.

        Plus traces on boundary facets are zero.
        """
        m = self.space.mesh
        out = []
        for side in (0, 1):
            fs = facet_side(m, side)
            v = self.eval_at(fs.element, fs.ref_points(t))
            out.append(np.where(fs.valid[:, None], v, 0.0))
        return out[0], out[1]

    def facet_flux_traces(self, t: np.ndarray, A: np.ndarray):
        """One-sided ``A grad u . n_F`` on every facet (plus zero on the boundary)."""
        m = self.space.mesh
        out = []
        for side in (0, 1):
            fs = facet_side(m, side)
            g = self.grad_at(fs.element, fs.ref_points(t))
            fl = np.einsum("fij,fpj,fi->fp", A[fs.element], g, m.facet_normal)
            out.append(np.where(fs.valid[:, None], fl, 0.0))
        return out[0], out[1]


def facet_jump(fn: FeFunction, facets, t) -> np.ndarray:
    vm, vp = fn.facet_traces(np.asarray(t, float))
    interior = fn.space.mesh.facet_class == INTERIOR
    j = np.where(interior[:, None], vm - vp, vm)
    return j[facets]


def facet_avg_w(vm, vp, weights, facets) -> np.ndarray:
    from .problems import lower_average
    return lower_average(np.asarray(vm, float), np.asarray(vp, float), weights, facets)


def facet_avg_upper(vm, vp, weights, facets) -> np.ndarray:
    from .problems import upper_average
    return upper_average(np.asarray(vm, float), np.asarray(vp, float), weights, facets)


# ---------------------------------------------------------------------------
# L2 projections
# ---------------------------------------------------------------------------


def l2_project(f, mesh: Mesh2D, degree: int, order: int | None = None) -> FeFunction:
    """Elementwise ``L2`` projection onto ``DG(degree)``."""
    space = LagrangeSpace(mesh, degree, "dg")
    pts, w = triangle_rule(order or 2 * degree + 6)
    phi = space.ref_basis(pts)
    Mref = phi.T @ (w[:, None] * phi)
    x = physical_points(mesh, pts)
    fv = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
    rhs = (fv * w) @ phi
    c = np.linalg.solve(Mref, rhs.T).T
    return FeFunction(space, c.ravel())


def facet_project(f, mesh: Mesh2D, degree: int, facets=None, order: int | None = None) -> np.ndarray:
    """Coefficients ``int_F f q_j`` of the facet ``L2`` projection in the orthonormal Legendre basis."""
    facets = np.arange(mesh.num_facets) if facets is None else np.asarray(facets)
    t, w = line_rule(order or 2 * degree + 6)
    a = mesh.vertices[mesh.facets[facets, 0]]
    b = mesh.vertices[mesh.facets[facets, 1]]
    x = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    fv = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
    h = mesh.facet_length[facets]
    q = legendre_facet(t, degree)
    # int_F f q_j ds with q_j = sqrt(1/h) * legendre_facet
    return np.sqrt(h)[:, None] * ((fv * w) @ q)


def physical_points(mesh: Mesh2D, ref_pts: np.ndarray, elements=None) -> np.ndarray:
    e = slice(None) if elements is None else elements
    return mesh.vertices[mesh.triangles[e, 0]][:, None, :] + np.einsum("eij,pj->epi", mesh.jac[e], ref_pts)


def facet_points(mesh: Mesh2D, t: np.ndarray, facets=None) -> np.ndarray:
    f = slice(None) if facets is None else facets
    a = mesh.vertices[mesh.facets[f, 0]]
    b = mesh.vertices[mesh.facets[f, 1]]
    return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


# ---------------------------------------------------------------------------
# Raviart-Thomas
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def rt_reference(s: int):
    """Prime basis and reference dual matrix of ``RT_s``.

    Returns ``(coef, C)`` where ``coef`` has shape ``(2, dim_p(s+1), n)``
    (monomial coefficients of each prime basis field) and ``C`` maps reference
    degrees of freedom to prime coefficients.
    """
    n_all = dim_p(s + 1)
    exps = monomial_exponents(s + 1)
    idx = {e: i for i, e in enumerate(exps)}
    cols = []
    for a, b in monomial_exponents(s):
        for c in (0, 1):
            v = np.zeros((2, n_all))
            v[c, idx[(a, b)]] = 1.0
            cols.append(v)
    for j in range(s + 1):  # x * (x^(s-j) y^j)
        a, b = s - j, j
        v = np.zeros((2, n_all))
        v[0, idx[(a + 1, b)]] = 1.0
        v[1, idx[(a, b + 1)]] = 1.0
        cols.append(v)
    coef = np.stack(cols, axis=-1)
    n = coef.shape[-1]
    assert n == (s + 1) * (s + 3)
    # orthonormalise the prime basis on K_ref before forming the dual matrix
    pts, w = triangle_rule(2 * s + 2)
    vals = _rt_eval_coef(pts, coef, s)
    G = np.einsum("p,pcn,pcm->nm", w, vals, vals)
    coef = coef @ np.linalg.inv(np.linalg.cholesky(G)).T

    D = np.zeros((n, n))
    t, w = line_rule(2 * s + 4)
    q = legendre_facet(t, s)
    for i in range(3):
        a, b = REF_VERTICES[(i + 1) % 3], REF_VERTICES[(i + 2) % 3]
        e = b - a
        nrm = np.array([e[1], -e[0]])  # outward normal times length
        pts = a[None, :] + t[:, None] * e[None, :]
        vals = _rt_eval_coef(pts, coef, s)  # (np, 2, n)
        flux = np.einsum("pcn,c->pn", vals, nrm)
        D[i * (s + 1):(i + 1) * (s + 1)] = (q * w[:, None]).T @ flux
    if s >= 1:
        pts, w = triangle_rule(2 * s + 2)
        vals = _rt_eval_coef(pts, coef, s)
        psi = interior_test(pts, s)  # (np, m, 2)
        D[3 * (s + 1):] = np.einsum("p,pmc,pcn->mn", w, psi, vals)
    return coef, np.linalg.inv(D)


def _rt_eval_coef(pts, coef, s):
    return np.einsum("pm,cmn->pcn", monomials(pts, s + 1), coef)


def interior_test(pts: np.ndarray, s: int) -> np.ndarray:
    """Reference interior test fields ``(np, 2 dim_p(s-1), 2)``."""
    p = orthonormal_basis(pts, s - 1)
    out = np.zeros(pts.shape[:-1] + (2 * p.shape[-1], 2))
    out[..., 0::2, 0] = p
    out[..., 1::2, 1] = p
    return out


@lru_cache(maxsize=None)
def rt_shape(pts_key: bytes, npts: int, s: int):
    pts = np.frombuffer(pts_key).reshape(npts, 2)
    coef, C = rt_reference(s)
    vals = np.einsum("pcn,nd->pcd", _rt_eval_coef(pts, coef, s), C)  # dual basis values
    g = monomial_grads(pts, s + 1)  # (np, m, 2)
    div = np.einsum("pmc,cmn,nd->pd", g, coef, C)
    return vals, div


def rt_ref_basis(pts: np.ndarray, s: int):
    """Reference dual basis values ``(np, 2, n)`` and divergences ``(np, n)``."""
    pts = np.ascontiguousarray(pts, dtype=float)
    return rt_shape(pts.tobytes(), len(pts), s)


class RtSpace:
    """Raviart-Thomas space of degree ``s`` with facet and interior moments."""

    def __init__(self, mesh: Mesh2D, degree: int):
        if degree < 0:
            raise ValueError("RT degree must be >= 0")
        self.mesh = mesh
        self.degree = degree
        s = degree
        self.nfacet = s + 1
        self.nint = s * (s + 1)
        self.nloc = (s + 1) * (s + 3)
        self.ndofs = mesh.num_facets * self.nfacet + mesh.num_elements * self.nint

    def facet_dofs(self, facets=None) -> np.ndarray:
        f = np.arange(self.mesh.num_facets) if facets is None else np.asarray(facets)
        return f[:, None] * self.nfacet + np.arange(self.nfacet)[None, :]

    def interior_dofs(self, elements=None) -> np.ndarray:
        e = np.arange(self.mesh.num_elements) if elements is None else np.asarray(elements)
        return self.mesh.num_facets * self.nfacet + e[:, None] * self.nint + np.arange(self.nint)[None, :]

    @cached_property
    def _local_factor(self) -> np.ndarray:
        """``(nK, 3, s+1)`` factors turning global facet moments into reference dofs."""
        m = self.mesh
        j = np.arange(self.nfacet)
        rev = element_facet_reverse(m)
        par = np.where(rev[:, :, None] & (j[None, None, :] % 2 == 1), -1.0, 1.0)
        return m.signs[:, :, None] * par * np.sqrt(m.facet_length[m.element_facets])[:, :, None]

    def reference_dofs(self, coeffs: np.ndarray, elements=None) -> np.ndarray:
        m = self.mesh
        e = np.arange(m.num_elements) if elements is None else np.asarray(elements)
        fd = coeffs[self.facet_dofs()][m.element_facets[e]] * self._local_factor[e]
        out = fd.reshape(len(e), -1)
        if self.nint:
            out = np.concatenate([out, coeffs[self.interior_dofs(e)]], axis=1)
        return out

    def function(self, values=None) -> "RtFlux":
        return RtFlux(self, np.zeros(self.ndofs) if values is None else np.asarray(values, float))

    def moments_of(self, field, elements_field=None, order: int | None = None) -> np.ndarray:
        """Degrees of freedom of the RT interpolant of ``field(x, y) -> (2, ...)``.

        Facet moments use the global normal; for fields discontinuous across
        facets use the flux-recovery routines instead.
        """
        m, s = self.mesh, self.degree
        out = np.zeros(self.ndofs)
        t, w = line_rule(order or 2 * s + 8)
        x = facet_points(m, t)
        v = np.asarray(field(x[..., 0], x[..., 1]))
        fl = v[0] * m.facet_normal[:, 0, None] + v[1] * m.facet_normal[:, 1, None]
        q = legendre_facet(t, s)
        out[self.facet_dofs()] = np.sqrt(m.facet_length)[:, None] * ((fl * w) @ q)
        if self.nint:
            pts, wq = triangle_rule(order or 2 * s + 8)
            xp = physical_points(m, pts)
            v = np.moveaxis(np.asarray(field(xp[..., 0], xp[..., 1])), 0, -1)  # (nK, np, 2)
            out[self.interior_dofs()] = interior_moments(m, v, pts, wq, s)
        return out


def interior_moments(mesh: Mesh2D, vals: np.ndarray, pts, w, s: int, elements=None) -> np.ndarray:
    """``int_K v . J^{-T} psi_m`` for physical vector values ``vals (nE, np, 2)``."""
    e = slice(None) if elements is None else elements
    ref = np.einsum("ecd,epd->epc", mesh.inv_jac[e], vals)
    psi = interior_test(pts, s)
    return mesh.det[e][:, None] * np.einsum("p,epc,pmc->em", w, ref, psi)


@dataclass(eq=False)
class RtFlux:
    space: RtSpace
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.space.ndofs,):
            raise ValueError(f"expected {self.space.ndofs} values, got {self.values.shape}")

    def __add__(self, other: "RtFlux") -> "RtFlux":
        s = max(self.space.degree, other.space.degree)
        a, b = self.promote(s), other.promote(s)
        return RtFlux(a.space, a.values + b.values)

    def _ref(self, elements):
        m = self.space.mesh
        if elements is not None:
            e = np.asarray(elements)
            if e.size and (e.min() < 0 or e.max() >= m.num_elements):
                raise IndexError("element id out of range")
        return self.space.reference_dofs(self.values, elements)

    def eval(self, ref_points: np.ndarray, elements=None) -> np.ndarray:
        """Physical values ``(nE, np, 2)`` at common reference points (Piola map)."""
        m = self.space.mesh
        e = slice(None) if elements is None else np.asarray(elements)
        d = self._ref(elements)
        vals, _ = rt_ref_basis(ref_points, self.space.degree)
        vref = np.einsum("pcn,en->epc", vals, d)
        return np.einsum("eij,epj->epi", m.jac[e], vref) / m.det[e][:, None, None]

    def divergence(self, ref_points: np.ndarray, elements=None) -> np.ndarray:
        m = self.space.mesh
        e = slice(None) if elements is None else np.asarray(elements)
        d = self._ref(elements)
        _, div = rt_ref_basis(ref_points, self.space.degree)
        return (d @ div.T) / m.det[e][:, None]

    def eval_at(self, elements, ref_points) -> np.ndarray:
        m = self.space.mesh
        s = self.space.degree
        coef, C = rt_reference(s)
        d = self.space.reference_dofs(self.values, elements)
        pc = d @ C.T
        mono = monomials(ref_points, s + 1)
        vref = np.einsum("epm,cmn,en->epc", mono, coef, pc)
        return np.einsum("eij,epj->epi", m.jac[elements], vref) / m.det[elements][:, None, None]

    def facet_values(self, t: np.ndarray):
        """Field values ``(nF, nq, 2)`` on facets from the minus and plus sides."""
        m = self.space.mesh
        out = []
        for side in (0, 1):
            fs = facet_side(m, side)
            v = self.eval_at(fs.element, fs.ref_points(t))
            out.append(np.where(fs.valid[:, None, None], v, 0.0))
        return out[0], out[1]

    def normal_traces(self, t: np.ndarray):
        """``tau . n_F`` from the minus and plus sides (plus zero on the boundary)."""
        n = self.space.mesh.facet_normal
        vm, vp = self.facet_values(t)
        return np.einsum("fpc,fc->fp", vm, n), np.einsum("fpc,fc->fp", vp, n)

    def promote(self, degree: int) -> "RtFlux":
        s = self.space.degree
        if degree == s:
            return self
        if degree < s:
            raise ValueError("can only promote to a higher degree")
        new = RtSpace(self.space.mesh, degree)
        out = np.zeros(new.ndofs)
        fv = self.values[self.space.facet_dofs()]
        out[new.facet_dofs()[:, :s + 1]] = fv
        out[new.interior_dofs()] = self.space.reference_dofs(self.values) @ promotion_matrix(s, degree).T
        return RtFlux(new, out)


@lru_cache(maxsize=None)
def promotion_matrix(s: int, t: int) -> np.ndarray:
    """Reference dofs of ``RT_s`` to interior dofs of ``RT_t``."""
    pts, w = triangle_rule(s + t + 2)
    vals, _ = rt_ref_basis(pts, s)
    psi = interior_test(pts, t)
    return np.einsum("p,pmc,pcn->mn", w, psi, vals)
