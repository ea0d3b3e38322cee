"""Diffusion coefficients, facet weights and the benchmark problems.

The Kellogg checkerboard and L-shape benchmarks have ``f = 0`` and a point
singularity at the origin; the manufactured problems are polynomial (or
piecewise polynomial across a vertical interface) and are used as exactness
oracles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate

from . import mesh as meshmod
from .mesh import DIRICHLET, INTERIOR, Mesh2D


def as_tensor(a) -> np.ndarray:
    """Accept a scalar, ``[a11, a12, a22]`` or a 2x2 array."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a * np.eye(2)
    if a.shape == (3,):
        return np.array([[a[0], a[1]], [a[1], a[2]]])
    if a.shape == (2, 2):
        return a.copy()
    raise ValueError(f"cannot interpret {a!r} as a 2x2 tensor")


def _check_spd(t: np.ndarray, rid) -> None:
    if abs(t[0, 1] - t[1, 0]) > 1e-14 * max(1.0, np.abs(t).max()):
        raise ValueError(f"tensor of region {rid} is not symmetric")
    if np.linalg.eigvalsh(t).min() <= 0:
        raise ValueError(f"tensor of region {rid} is not positive definite")


@dataclass(eq=False)
class CoefficientField:
    """Piecewise-constant SPD tensor resolved on the elements of a mesh."""

    tensors: dict[int, np.ndarray]
    region: np.ndarray

    def __post_init__(self):
        self.tensors = {int(k): as_tensor(v) for k, v in self.tensors.items()}
        for k, t in self.tensors.items():
            _check_spd(t, k)
        ids = np.array(sorted(self.tensors))
        missing = np.setdiff1d(np.unique(self.region), ids)
        if len(missing):
            raise ValueError(f"no tensor for region(s) {missing.tolist()}")
        table = np.zeros((ids.max() + 1, 2, 2))
        lam = np.zeros(ids.max() + 1)
        sq = np.zeros_like(table)
        isq = np.zeros_like(table)
        for k, t in self.tensors.items():
            w, V = np.linalg.eigh(t)
            table[k] = t
            lam[k] = w.max()
            sq[k] = (V * np.sqrt(w)) @ V.T
            isq[k] = (V / np.sqrt(w)) @ V.T
        self.A = table[self.region]
        self.lam_max = lam[self.region]
        self.sqrt_A = sq[self.region]
        self.inv_sqrt_A = isq[self.region]
        self.is_scalar = all(np.allclose(t, t[0, 0] * np.eye(2), rtol=0, atol=0) for t in self.tensors.values())

    @classmethod
    def on_mesh(cls, mesh: Mesh2D, tensors: Mapping[int, object]) -> "CoefficientField":
        return cls(dict(tensors), mesh.region)


@dataclass(eq=False)
class FacetWeights:
    """Per-facet coefficient weights.

    On boundary facets ``omega_minus = 1`` and ``omega_plus = 0`` so that the
    lower weighted average reduces to the one-sided trace; the upper average
    is zero there.
    """

    alpha_minus: np.ndarray
    alpha_plus: np.ndarray
    omega_minus: np.ndarray
    omega_plus: np.ndarray
    alpha_min: np.ndarray
    alpha_max: np.ndarray
    A_F: np.ndarray


def facet_weights(mesh: Mesh2D, coeff: CoefficientField) -> FacetWeights:
    km, kp = mesh.facet_elements[:, 0], mesh.facet_elements[:, 1]
    interior = mesh.facet_class == INTERIOR
    am = coeff.lam_max[km]
    ap = np.where(interior, coeff.lam_max[np.where(interior, kp, 0)], np.nan)
    om = np.ones(mesh.num_facets)
    op = np.zeros(mesh.num_facets)
    s = am[interior] + ap[interior]
    om[interior] = ap[interior] / s
    op[interior] = am[interior] / s
    amin = np.where(interior, np.fmin(am, ap), am)
    amax = np.where(interior, np.fmax(am, ap), am)
    return FacetWeights(alpha_minus=am, alpha_plus=ap, omega_minus=om, omega_plus=op,
                        alpha_min=amin, alpha_max=amax, A_F=amin.copy())


def lower_average(vm, vp, w: FacetWeights, facets=None):
    """``{v}_w = omega+ v+ + omega- v-`` (one-sided trace on the boundary)."""
    om, op = (w.omega_minus, w.omega_plus) if facets is None else (w.omega_minus[facets], w.omega_plus[facets])
    shape = (-1,) + (1,) * (np.ndim(vm) - 1)
    return op.reshape(shape) * vp + om.reshape(shape) * vm


def upper_average(vm, vp, w: FacetWeights, facets=None):
    """``{v}^w = omega- v+ + omega+ v-`` (zero on the boundary)."""
    om, op = (w.omega_minus, w.omega_plus) if facets is None else (w.omega_minus[facets], w.omega_plus[facets])
    shape = (-1,) + (1,) * (np.ndim(vm) - 1)
    bnd = (op == 0).reshape(shape)
    return np.where(bnd, 0.0, om.reshape(shape) * vp + op.reshape(shape) * vm)


def jump(vm, vp, interior):
    """``v- - v+`` on interior facets, ``v-`` on the boundary."""
    shape = (-1,) + (1,) * (np.ndim(vm) - 1)
    return np.where(np.asarray(interior).reshape(shape), vm - vp, vm)


# ---------------------------------------------------------------------------
# problem definitions
# ---------------------------------------------------------------------------


def polar(x, y):
    r = np.hypot(x, y)
    th = np.arctan2(y, x)
    th = np.where(th < 0, th + 2 * np.pi, th)
    return r, th


@dataclass(eq=False)
class ProblemSpec:
    name: str
    tensors: dict[int, np.ndarray]
    region_fn: Callable[[np.ndarray], np.ndarray]
    mesh_fn: Callable[[int], Mesh2D]
    f: Callable
    u: Callable | None = None
    grad_u: Callable | None = None
    g: Callable | None = None
    boundary_segments: list = field(default_factory=list)
    singular_point: tuple[float, float] | None = None
    source_free: bool = False
    params: dict = field(default_factory=dict)

    def initial_mesh(self, n: int = 1) -> Mesh2D:
        return self.mesh_fn(n)

    def coefficient(self, mesh: Mesh2D) -> CoefficientField:
        return CoefficientField(self.tensors, mesh.region)

    def tensor_at(self, pts: np.ndarray) -> np.ndarray:
        ids = np.asarray(self.region_fn(pts), dtype=np.int64)
        table = np.stack([as_tensor(self.tensors[i]) for i in range(max(self.tensors) + 1)])
        return table[ids]

    def dirichlet(self, x, y):
        if self.u is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.u(x, y)

    def normal_flux(self, pts: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """``A grad u . n`` at points with given normals."""
        g = self.grad_u(pts[:, 0], pts[:, 1])
        A = self.tensor_at(pts)
        return np.einsum("pij,jp,pi->p", A, np.asarray(g), normals)

    @cached_property
    def energy_norm_sq(self) -> float | None:
        """``||A^{1/2} grad u||^2`` from the boundary integral of ``u A grad u . n``.

        Only valid when ``f = 0``; the integrand is smooth on each segment.
        """
        if not (self.source_free and self.u is not None and self.boundary_segments):
            return None
        total = 0.0
        for a, b in self.boundary_segments:
            a, b = np.asarray(a, float), np.asarray(b, float)
            d = b - a
            L = np.hypot(*d)
            n = np.array([d[1], -d[0]]) / L

            def integrand(t):
                p = (a + t * d)[None, :]
                return float(self.u(p[:, 0], p[:, 1])[0] * self.normal_flux(p, n[None, :])[0])

            val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
            total += val * L
        return total


KELLOGG_BETA = 0.1
KELLOGG_R = 161.4476387975881
KELLOGG_RHO = np.pi / 4
KELLOGG_SIGMA = -14.92256510455152


def kellogg_mu(theta, beta=KELLOGG_BETA, rho=KELLOGG_RHO, sigma=KELLOGG_SIGMA, deriv: bool = False):
    th = np.asarray(theta, dtype=float)
    pi = np.pi
    # (amplitude, shift) per quadrant: mu = amp * cos((theta - shift) * beta)
    amps = np.array([np.cos((pi / 2 - sigma) * beta), np.cos(rho * beta),
                     np.cos(sigma * beta), np.cos((pi / 2 - rho) * beta)])
    shifts = np.array([pi / 2 - rho, pi - sigma, pi + rho, 3 * pi / 2 + sigma])
    q = np.clip((th // (pi / 2)).astype(np.int64), 0, 3)
    arg = (th - shifts[q]) * beta
    if deriv:
        return -amps[q] * beta * np.sin(arg)
    return amps[q] * np.cos(arg)


def _checker_region(pts):
    """1 on the first and third quadrants; points on the axes follow the angular branch."""
    _, th = polar(pts[:, 0], pts[:, 1])
    q = np.clip((th // (np.pi / 2)).astype(np.int64), 0, 3)
    return (q % 2 == 0).astype(np.int64)


_SQUARE_SEGMENTS = [((1, -1), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (0, 1)), ((0, 1), (-1, 1)),
                    ((-1, 1), (-1, 0)), ((-1, 0), (-1, -1)), ((-1, -1), (0, -1)), ((0, -1), (1, -1))]


def kellogg_problem() -> ProblemSpec:
    beta, R, rho, sigma = KELLOGG_BETA, KELLOGG_R, KELLOGG_RHO, KELLOGG_SIGMA

    def u(x, y):
        r, th = polar(np.asarray(x, float), np.asarray(y, float))
        return r ** beta * kellogg_mu(th)

    def grad_u(x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        r, th = polar(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            rb = r ** (beta - 1)
            mu, dmu = kellogg_mu(th), kellogg_mu(th, deriv=True)
            c, s = np.cos(th), np.sin(th)
            gx = rb * (beta * mu * c - dmu * s)
            gy = rb * (beta * mu * s + dmu * c)
        return np.stack([gx, gy])

    return ProblemSpec(
        name="kellogg", tensors={0: np.eye(2), 1: R * np.eye(2)}, region_fn=_checker_region,
        mesh_fn=lambda n: meshmod.square_mesh(n, region_fn=_checker_region),
        f=lambda x, y: np.zeros_like(np.asarray(x, float)), u=u, grad_u=grad_u,
        boundary_segments=_SQUARE_SEGMENTS, singular_point=(0.0, 0.0), source_free=True,
        params=dict(beta=beta, R=R, rho=rho, sigma=sigma))


def lshape_problem() -> ProblemSpec:
    def u(x, y):
        r, th = polar(np.asarray(x, float), np.asarray(y, float))
        return r ** (2 / 3) * np.sin(2 * th / 3)

    def grad_u(x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        r, th = polar(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (2 / 3) * r ** (-1 / 3)
            return np.stack([a * (np.sin(2 * th / 3) * np.cos(th) - np.cos(2 * th / 3) * np.sin(th)),
                             a * (np.sin(2 * th / 3) * np.sin(th) + np.cos(2 * th / 3) * np.cos(th))])

    segs = [((0, 0), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (0, 1)), ((0, 1), (-1, 1)),
            ((-1, 1), (-1, 0)), ((-1, 0), (-1, -1)), ((-1, -1), (0, -1)), ((0, -1), (0, 0))]
    return ProblemSpec(
        name="lshape", tensors={0: np.eye(2)}, region_fn=lambda p: np.zeros(len(p), dtype=np.int64),
        mesh_fn=lambda n: meshmod.lshape_mesh(n), f=lambda x, y: np.zeros_like(np.asarray(x, float)),
        u=u, grad_u=grad_u, boundary_segments=segs, singular_point=(0.0, 0.0), source_free=True)


def checkerboard_problem(R: float) -> ProblemSpec:
    """``u = sin(pi x) sin(pi y) / alpha`` on the Kellogg checkerboard.

    ``alpha = R`` on the first and third quadrants and 1 elsewhere; ``u`` and
    the normal flux are continuous across the axes for any ``R``.
    """
    pi = np.pi

    def alpha(x, y):
        return np.where(_checker_region(np.column_stack([np.ravel(x), np.ravel(y)])).reshape(np.shape(x)) == 1, R, 1.0)

    def u(x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return np.sin(pi * x) * np.sin(pi * y) / alpha(x, y)

    def grad_u(x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        a = alpha(x, y)
        return np.stack([pi * np.cos(pi * x) * np.sin(pi * y) / a, pi * np.sin(pi * x) * np.cos(pi * y) / a])

    return ProblemSpec(
        name=f"checkerboard:{R:g}", tensors={0: np.eye(2), 1: R * np.eye(2)}, region_fn=_checker_region,
        mesh_fn=lambda n: meshmod.square_mesh(n, region_fn=_checker_region),
        f=lambda x, y: 2 * pi ** 2 * np.sin(pi * np.asarray(x, float)) * np.sin(pi * np.asarray(y, float)),
        u=u, grad_u=grad_u, params=dict(R=R))


# ---------------------------------------------------------------------------
# manufactured polynomial solutions
# ---------------------------------------------------------------------------


def default_polynomial(degree: int) -> np.ndarray:
    """Coefficient matrix ``c[i, j]`` of ``x^i y^j`` using every monomial up to ``degree``."""
    c = np.zeros((degree + 1, degree + 1))
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            c[i, j] = (1 + i + 2 * j) / (1 + i + j) * (-1) ** (i * j)
    return c


def _poly_solution(c: np.ndarray, A: np.ndarray):
    cx = P.polyder(c, axis=0)
    cy = P.polyder(c, axis=1)
    cxx = P.polyder(cx, axis=0)
    cxy = P.polyder(cx, axis=1)
    cyy = P.polyder(cy, axis=1)

    def u(x, y):
        return P.polyval2d(np.asarray(x, float), np.asarray(y, float), c)

    def grad_u(x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return np.stack([P.polyval2d(x, y, cx), P.polyval2d(x, y, cy)])

    def f(x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return -(A[0, 0] * P.polyval2d(x, y, cxx) + 2 * A[0, 1] * P.polyval2d(x, y, cxy)
                 + A[1, 1] * P.polyval2d(x, y, cyy))

    return u, grad_u, f


def manufactured_problem(degree: int, coeff=None, poly=None, n: int = 2,
                         neumann: bool = False) -> ProblemSpec:
    """Polynomial exact solution of total degree ``degree`` on ``(0, 1)^2``.

    ``coeff`` is ``None`` (identity), one tensor (uniform), or a mapping
    ``{0: a_left, 1: a_right}`` of scalars describing an interface at
    ``x = 1/2``; in that case the solution is
    ``u = (x - 1/2) g(y) / a + h(y)`` which is continuous with continuous
    normal flux. ``poly`` overrides the uniform-coefficient solution with a
    coefficient matrix ``c[i, j]`` of ``x^i y^j``. With ``neumann`` the
    right edge ``x = 1`` is a Neumann boundary.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    def right_neumann(mids):
        return np.where(np.isclose(mids[:, 0], 1.0), meshmod.NEUMANN, DIRICHLET)

    tag_fn = right_neumann if neumann else None

    if isinstance(coeff, Mapping) and len(coeff) == 2:
        a0, a1 = (float(np.asarray(coeff[0]).ravel()[0]), float(np.asarray(coeff[1]).ravel()[0]))

        def region_fn(pts):
            return (pts[:, 0] > 0.5).astype(np.int64)

        gc = np.array([(-1) ** j * (j + 1.0) for j in range(degree)])
        hc = np.array([1.0 / (j + 1) for j in range(degree + 1)])
        gd, gdd = P.polyder(gc), P.polyder(gc, 2)
        hd, hdd = P.polyder(hc), P.polyder(hc, 2)

        def al(x):
            return np.where(x > 0.5, a1, a0)

        def u(x, y):
            x, y = np.asarray(x, float), np.asarray(y, float)
            return (x - 0.5) * P.polyval(y, gc) / al(x) + P.polyval(y, hc)

        def grad_u(x, y):
            x, y = np.asarray(x, float), np.asarray(y, float)
            return np.stack([P.polyval(y, gc) / al(x) + 0 * x,
                             (x - 0.5) * P.polyval(y, gd) / al(x) + P.polyval(y, hd)])

        def f(x, y):
            x, y = np.asarray(x, float), np.asarray(y, float)
            return -((x - 0.5) * P.polyval(y, gdd) + al(x) * P.polyval(y, hdd))

        tensors = {0: a0 * np.eye(2), 1: a1 * np.eye(2)}
        name = f"manufactured:{degree}:interface"
    else:
        A = np.eye(2) if coeff is None else as_tensor(coeff)
        c = default_polynomial(degree) if poly is None else np.asarray(poly, float)
        u, grad_u, f = _poly_solution(c, A)
        tensors = {0: A}

        def region_fn(pts):
            return np.zeros(len(pts), dtype=np.int64)
        name = f"manufactured:{degree}"

    def mesh_fn(m):
        return meshmod.unit_square_mesh(n * m, pattern="diagonal", region_fn=region_fn, tag_fn=tag_fn)

    spec = ProblemSpec(name=name, tensors=tensors, region_fn=region_fn, mesh_fn=mesh_fn,
                       f=f, u=u, grad_u=grad_u, params=dict(degree=degree))
    if neumann:
        # outward normal on x = 1 is +e_x; g = -A grad u . n
        def g(x, y):
            x, y = np.asarray(x, float), np.asarray(y, float)
            pts = np.column_stack([x.ravel(), y.ravel()])
            nrm = np.tile([1.0, 0.0], (len(pts), 1))
            return -spec.normal_flux(pts, nrm).reshape(x.shape)
        spec.g = g
    return spec


def get_problem(name: str) -> ProblemSpec:
    """Resolve ``kellogg``, ``lshape``, ``manufactured:<degree>`` or ``checkerboard:<R>``."""
    if name == "kellogg":
        return kellogg_problem()
    if name == "lshape":
        return lshape_problem()
    head, _, arg = name.partition(":")
    if head == "manufactured" and arg:
        return manufactured_problem(int(arg))
    if head == "checkerboard" and arg:
        return checkerboard_problem(float(arg))
    raise ValueError(f"unknown problem {name!r}")


# ---------------------------------------------------------------------------
# quasi-monotonicity (diagnostic)
# ---------------------------------------------------------------------------


def quasi_monotone_vertices(mesh: Mesh2D, coeff: CoefficientField) -> np.ndarray:
    """Boolean per vertex: is the coefficient quasi-monotone around it.

    For each element ``K`` of the patch, the patch elements with coefficient
    at least ``lam(K)`` must contain a fan, connected through edges at the
    vertex, that holds ``K`` and every patch maximiser (for Dirichlet
    vertices: ``K`` and an element with a Dirichlet edge at the vertex).
    """
    lam = coeff.lam_max
    ptr, elems = mesh.vertex_elements()
    dir_v = np.zeros(mesh.num_vertices, dtype=bool)
    dir_v[mesh.dirichlet_vertices] = True
    dir_facet = mesh.facet_class == DIRICHLET
    out = np.ones(mesh.num_vertices, dtype=bool)
    for z in range(mesh.num_vertices):
        els = elems[ptr[z]:ptr[z + 1]]
        if len(els) <= 1:
            continue
        # adjacency through facets containing z
        fs = mesh.element_facets[els]
        nbr = {int(e): [] for e in els}
        touches_d = {int(e): False for e in els}
        for e, row in zip(els, fs):
            for f in row:
                a, b = mesh.facets[f]
                if a != z and b != z:
                    continue
                other = mesh.facet_elements[f, 1] if mesh.facet_elements[f, 0] == e else mesh.facet_elements[f, 0]
                if other >= 0:
                    nbr[int(e)].append(int(other))
                elif dir_facet[f]:
                    touches_d[int(e)] = True
        top = lam[els].max()
        hat = {int(e) for e in els if lam[e] == top}
        for K in els:
            K = int(K)
            seen = {K}
            stack = [K]
            while stack:
                e = stack.pop()
                for o in nbr[e]:
                    if o not in seen and lam[o] >= lam[K]:
                        seen.add(o)
                        stack.append(o)
            if dir_v[z]:
                ok = any(touches_d[e] for e in seen)
            else:
                ok = hat <= seen
            if not ok:
                out[z] = False
                break
    return out
