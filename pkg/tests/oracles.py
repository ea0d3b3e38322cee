"""Independent reference computations used to derive pinned test values.

Nothing here imports the package under test. Each function either evaluates
a closed form at high precision, integrates symbolically, enumerates by brute
force, or integrates by adaptive/composite quadrature. Running this file
prints every derived value; the tests hold frozen copies of these numbers.
"""
from __future__ import annotations

import itertools

import mpmath as mp
import numpy as np
import sympy as sy
from scipy import integrate
from scipy.special import roots_legendre

# ---------------------------------------------------------------------------
# closed forms at high precision
# ---------------------------------------------------------------------------

KELLOGG = dict(beta="0.1", R="161.4476387975881", sigma="-14.92256510455152")


def kellogg_u(r, theta, dps: int = 40):
    """Kellogg solution ``r^beta mu(theta)`` with mpmath, quadrant by quadrant."""
    with mp.workdps(max(dps, mp.mp.dps)):
        b = mp.mpf(KELLOGG["beta"])
        s = mp.mpf(KELLOGG["sigma"])
        rho = mp.pi / 4
        th = mp.mpf(theta)
        if th <= mp.pi / 2:
            mu = mp.cos((mp.pi / 2 - s) * b) * mp.cos((th - mp.pi / 2 + rho) * b)
        elif th <= mp.pi:
            mu = mp.cos(rho * b) * mp.cos((th - mp.pi + s) * b)
        elif th <= 3 * mp.pi / 2:
            mu = mp.cos(s * b) * mp.cos((th - mp.pi - rho) * b)
        else:
            mu = mp.cos((mp.pi / 2 - rho) * b) * mp.cos((th - 3 * mp.pi / 2 - s) * b)
        return mp.mpf(r) ** b * mu


def kellogg_energy_sq(dps: int = 25):
    """``||A^{1/2} grad u||^2`` as the boundary integral of ``u A du/dn`` (``f = 0``).

    The normal derivative is a numerical derivative of :func:`kellogg_u`.
    """
    R = mp.mpf(KELLOGG["R"])

    def u(x, y):
        th = mp.atan2(y, x)
        return kellogg_u(mp.sqrt(x * x + y * y), th + 2 * mp.pi if th < 0 else th, dps + 10)

    # unit segments of the boundary of (-1, 1)^2 with their outward normals
    segs = [((1, -1), (1, 0), (1, 0)), ((1, 0), (1, 1), (1, 0)), ((1, 1), (0, 1), (0, 1)),
            ((0, 1), (-1, 1), (0, 1)), ((-1, 1), (-1, 0), (-1, 0)), ((-1, 0), (-1, -1), (-1, 0)),
            ((-1, -1), (0, -1), (0, -1)), ((0, -1), (1, -1), (0, -1))]
    total = mp.mpf(0)
    with mp.workdps(dps):
        for a, b, n in segs:
            def g(t):
                x, y = a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])
                al = R if x * y > 0 else 1
                return u(x, y) * al * mp.diff(lambda h: u(x + h * n[0], y + h * n[1]), 0)
            total += mp.quad(g, [0, 1])
        return total


def symbolic_source(u_expr: str, A) -> sy.Expr:
    """``-div(A grad u)`` for a constant tensor ``A``."""
    x, y = sy.symbols("x y")
    u = sy.sympify(u_expr)
    g = sy.Matrix([sy.diff(u, x), sy.diff(u, y)])
    flux = sy.Matrix(A) * g
    return sy.simplify(-(sy.diff(flux[0], x) + sy.diff(flux[1], y)))


def reference_monomial_integral(a: int, b: int) -> sy.Rational:
    """``int x^a y^b`` over the unit right triangle."""
    x, y = sy.symbols("x y")
    return sy.integrate(sy.integrate(x ** a * y ** b, (y, 0, 1 - x)), (x, 0, 1))


def facet_p1_projection_sin():
    """``L2([0,1])`` projection of ``sin`` onto ``a + b t`` (2x2 mass solve)."""
    with mp.workdps(30):
        M = mp.matrix([[1, mp.mpf(1) / 2], [mp.mpf(1) / 2, mp.mpf(1) / 3]])
        rhs = mp.matrix([mp.quad(mp.sin, [0, 1]), mp.quad(lambda t: t * mp.sin(t), [0, 1])])
        c = mp.lu_solve(M, rhs)
        return float(c[0]), float(c[1])


# ---------------------------------------------------------------------------
# brute-force mesh enumeration
# ---------------------------------------------------------------------------


def crisscross_triangles(x0, x1, y0, y1, nx, ny):
    """Vertex coordinates of the four triangles per cell around the cell centre."""
    xs = [x0 + (x1 - x0) * i / nx for i in range(nx + 1)]
    ys = [y0 + (y1 - y0) * j / ny for j in range(ny + 1)]
    tris = []
    for i, j in itertools.product(range(nx), range(ny)):
        c = ((xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2)
        p = [(xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
        for a in range(4):
            tris.append((p[a], p[(a + 1) % 4], c))
    return tris


def count_edges(tris):
    """``(interior, boundary)`` edge counts by edge multiplicity."""
    count = {}
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = tuple(sorted((a, b)))
            count[key] = count.get(key, 0) + 1
    inner = sum(1 for v in count.values() if v == 2)
    outer = sum(1 for v in count.values() if v == 1)
    assert all(v in (1, 2) for v in count.values())
    return inner, outer


# ---------------------------------------------------------------------------
# quadrature oracles
# ---------------------------------------------------------------------------


def triangle_integral(f, p0, p1, p2, epsabs=1e-13):
    """Adaptive ``int_T f`` through the collapsed map ``(s, t) -> p0 + s e1 + t e2``."""
    p0, p1, p2 = (np.asarray(p, float) for p in (p0, p1, p2))
    e1, e2 = p1 - p0, p2 - p0
    jac = abs(e1[0] * e2[1] - e1[1] * e2[0])

    def g(t, s):
        x = p0 + s * e1 + t * e2
        return f(x[0], x[1])

    val, _ = integrate.dblquad(g, 0.0, 1.0, 0.0, lambda s: 1.0 - s, epsabs=epsabs, epsrel=1e-12)
    return val * jac


def oscillation_s0(f, tris):
    """``sqrt(sum_K h_K^2 ||f - mean_K f||_K^2)`` with ``h_K`` the longest edge."""
    total = 0.0
    for p0, p1, p2 in tris:
        area = 0.5 * abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
        mean = triangle_integral(f, p0, p1, p2) / area
        sq = triangle_integral(lambda x, y: (f(x, y) - mean) ** 2, p0, p1, p2)
        h = max(np.hypot(*np.subtract(a, b)) for a, b in ((p0, p1), (p1, p2), (p2, p0)))
        total += h ** 2 * sq
    return float(np.sqrt(total))


def diagonal_triangles(x0, x1, y0, y1, nx, ny):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    out = []
    for i, j in itertools.product(range(nx), range(ny)):
        a, b = (xs[i], ys[j]), (xs[i + 1], ys[j])
        c, d = (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])
        out += [(c, a, b), (a, c, d)]
    return out


def _gauss_triangle(order):
    """Conical-product Gauss rule on the unit right triangle (own construction)."""
    x, w = roots_legendre(order)
    x, w = 0.5 * (x + 1), 0.5 * w
    S, T = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    # (s, t) in the square -> (s, t (1 - s)) in the triangle
    pts = np.column_stack([S.ravel(), (T * (1 - S)).ravel()])
    return pts, (W * (1 - S)).ravel()


def composite_energy_error(vertices, triangles, grad_exact, grad_h, coef, singular, levels=200, order=12):
    """``||A^{1/2} grad(u - u_h)||`` with geometric subdivision towards a singular point.

    ``grad_h(e, x)`` returns the discrete gradient of element ``e`` at points
    ``x``; ``coef[e]`` is a scalar coefficient. Sub-triangles touching the
    singular point are split into four, ``levels`` times; the innermost piece
    is dropped, which is harmless when the integrand is ``O(r^{2 beta - 2})``.
    """
    pts, w = _gauss_triangle(order)
    sing = np.asarray(singular, float)
    total = 0.0

    def quad(e, p0, p1, p2):
        J = np.column_stack([p1 - p0, p2 - p0])
        x = p0 + pts @ J.T
        d = grad_exact(x[:, 0], x[:, 1]).T - grad_h(e, x)
        return coef[e] * abs(np.linalg.det(J)) * np.sum(w * np.einsum("pi,pi->p", d, d))

    for e, tri in enumerate(triangles):
        P = [np.asarray(vertices[i], float) for i in tri]
        stack = [(P, 0)]
        while stack:
            (p0, p1, p2), lev = stack.pop()
            touch = [np.array_equal(p, sing) for p in (p0, p1, p2)]
            if not any(touch):
                total += quad(e, p0, p1, p2)
                continue
            if lev >= levels:
                continue
            m01, m12, m20 = (p0 + p1) / 2, (p1 + p2) / 2, (p2 + p0) / 2
            stack += [((p0, m01, m20), lev + 1), ((m01, p1, m12), lev + 1),
                      ((m20, m12, p2), lev + 1), ((m01, m12, m20), lev + 1)]
    return float(np.sqrt(total))


if __name__ == "__main__":
    print("kellogg u(1, pi/4) =", mp.nstr(kellogg_u(1, mp.pi / 4), 20))
    for th in ("pi/2", "pi", "3*pi/2"):
        t = mp.mpf(eval(th, {"pi": mp.pi}))
        print(f"kellogg continuity at {th}:", mp.nstr(kellogg_u(1, t - mp.mpf("1e-30")) - kellogg_u(1, t + mp.mpf("1e-30")), 5))
    print("kellogg energy^2:", mp.nstr(kellogg_energy_sq(), 15))
    print("f for x^2 y with A = diag(2, 3):", symbolic_source("x**2*y", [[2, 0], [0, 3]]))
    print("int x^2 y^4 over reference triangle:", reference_monomial_integral(2, 4))
    print("P1 projection of sin on [0,1]: a, b =", facet_p1_projection_sin())
    for n in (1, 2, 4):
        print(f"crisscross (-1,1)^2 with {2 * n}x{2 * n} cells: interior, boundary =",
              count_edges(crisscross_triangles(-1, 1, -1, 1, 2 * n, 2 * n)))
    f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)  # noqa: E731
    print("osc s=0 unit square 4x4 diagonal:", repr(oscillation_s0(f, diagonal_triangles(0, 1, 0, 1, 4, 4))))
