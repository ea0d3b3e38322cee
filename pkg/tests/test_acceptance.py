"""Acceptance checks; one summary line per criterion is printed at the end of the run."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import amr_run
from earm.amr import fit_rate
from earm.estimator import estimate
from earm.flux import recover
from earm.mesh import refine_uniform
from earm.problems import (FacetWeights, checkerboard_problem, jump, lower_average,
                           manufactured_problem, upper_average)
from earm.solvers import DgParameters, solve_problem
from earm.spaces import LagrangeSpace

KS = (1, 2, 3)
RUNS = [(p, k) for p in ("kellogg", "lshape") for k in KS]


def window(h):
    """Post-transient iterations: the last half, the same window as the slope fit."""
    n = len(h)
    return slice(n - max(2, int(np.ceil(n / 2))), n)


# 1 -------------------------------------------------------------------------

def _exact_cases(k):
    yield "A = I", manufactured_problem(k)
    yield "interface 1|9", manufactured_problem(k, coeff={0: 1.0, 1: 9.0})
    yield "anisotropic", manufactured_problem(k, coeff=np.array([[2.0, 0.5], [0.5, 1.0]]))


@pytest.mark.parametrize("k", KS)
def test_c1_exactness(k, record):
    ok = True
    worst = dict(err=0.0, eta=0.0, cons=0.0)
    for _, p in _exact_cases(k):
        m = p.initial_mesh(2)
        c = p.coefficient(m)
        for disc, smax in (("cg", k - 1), ("dg", k)):
            params = DgParameters.default(k, delta=1)
            u, _ = solve_problem(p, m, k, disc, params=params if disc == "dg" else None)
            for s in range(smax + 1):
                rec = recover(u, p, s, params=params if disc == "dg" else None)
                est = estimate(u, rec, p, c)
                worst["err"] = max(worst["err"], est.error)
                worst["eta"] = max(worst["eta"], est.eta)
                worst["cons"] = max(worst["cons"], rec.report["max_conservation_abs"])
    ok = worst["err"] <= 1e-9 and worst["eta"] <= 1e-9 and worst["cons"] <= 1e-10
    record(1, ok, f"k={k}: max error {worst['err']:.1e}, max eta {worst['eta']:.1e}, "
                  f"max conservation {worst['cons']:.1e}")
    assert ok


# 2, 3, 4, 10 on every AMR iteration ------------------------------------------

@pytest.mark.parametrize("problem, k", RUNS)
@pytest.mark.parametrize("disc", ["cg", "dg"])
def test_c2_c3_conservation_and_conformity(problem, k, disc, record):
    h = amr_run(problem, k, disc).history
    cons, conf = h.column("conservation").max(), h.column("conformity").max()
    ok2 = record(2, cons <= 1e-9, f"{problem} {disc} k={k}: {len(h)} iterations, max scaled residual {cons:.1e}")
    ok3 = record(3, conf <= 1e-10, f"{problem} {disc} k={k}: max normal-trace mismatch {conf:.1e}")
    assert ok2 and ok3


@pytest.mark.parametrize("problem, k", RUNS)
def test_c4_reliability(problem, k, record):
    h = amr_run(problem, k).history
    err, eta = h.column("energy_error"), h.column("eta")
    ok = bool(np.all(err <= eta + 1e-10)) and all(r.reliable for r in h.records)
    record(4, ok, f"{problem} k={k}: min eta - error {np.min(eta - err):.2e} over {len(h)} iterations")
    assert ok


@pytest.mark.parametrize("problem, k", RUNS)
def test_c10_gram_spd_every_mesh(problem, k, record):
    piv = amr_run(problem, k).history.column("gram_min_pivot")
    ok = bool(np.all(np.isfinite(piv)) and np.all(piv > 0))
    record(10, ok, f"{problem} k={k}: Gram factorized on {len(piv)} meshes, min pivot {np.nanmin(piv):.2e}")
    assert ok


# 5, 6 Kellogg ---------------------------------------------------------------

EFF_BANDS = {1: (1.0, 2.5), 2: (1.5, 7.0), 3: (2.0, 12.0)}


@pytest.mark.parametrize("k", KS)
def test_c5_kellogg_rates(k, record):
    h = amr_run("kellogg", k).history
    n = h.column("num_dofs")
    se, sn = fit_rate(n, h.column("energy_error")), fit_rate(n, h.column("eta"))
    ok = abs(se + k / 2) <= 0.15 and abs(sn + k / 2) <= 0.2
    record(5, ok, f"k={k}: error slope {se:.3f}, estimator slope {sn:.3f} (target {-k / 2}), "
                  f"stop {h.status} at {int(n[-1])} dofs, rel {h.records[-1].relative_error:.4f}")
    assert ok


@pytest.mark.parametrize("k", KS)
def test_c6_kellogg_efficiency(k, record):
    h = amr_run("kellogg", k).history
    e = h.column("efficiency_index")[window(h)]
    lo, hi = EFF_BANDS[k]
    mean, ratio = float(e.mean()), float(e.max() / e.min())
    ok = lo <= mean <= hi and ratio <= 3
    record(6, ok, f"k={k}: mean efficiency {mean:.3f} in [{lo}, {hi}], max/min {ratio:.2f}")
    assert ok


# 7 L-shape ------------------------------------------------------------------

@pytest.mark.parametrize("k", KS)
def test_c7_lshape(k, record):
    h = amr_run("lshape", k).history
    n = h.column("num_dofs")
    se = fit_rate(n, h.column("energy_error"))
    mean = float(h.column("efficiency_index")[window(h)].mean())
    if k == 1:
        ok = abs(se + 0.5) <= 0.1 and 1.0 <= mean <= 1.5
    else:
        ok = se <= -k / 2
    ok = ok and h.status == "converged"
    record(7, ok, f"k={k}: error slope {se:.3f}, mean efficiency {mean:.3f}, {h.status} at {int(n[-1])} dofs")
    assert ok


# 8 contrast sweep -------------------------------------------------------------

def test_c8_robustness_sweep(record):
    contrasts = (1.0, 1e2, 161.4476387975881, 1e4)
    table = {}
    for R in contrasts:
        p = checkerboard_problem(R)
        m = p.initial_mesh(1)
        for level in range(4):
            c = p.coefficient(m)
            u, _ = solve_problem(p, m, 1, "cg")
            est = estimate(u, recover(u, p, 0), p, c)
            table.setdefault(u.space.ndofs, []).append(est.efficiency)
            m = refine_uniform(m)
    ok = True
    for ndofs, effs in table.items():
        ratio = max(effs) / min(effs)
        good = len(effs) == len(contrasts) and ratio < 2
        ok &= record(8, good, f"{ndofs} dofs: efficiency {', '.join(f'{e:.4f}' for e in effs)}, "
                              f"max/min {ratio:.4f}")
    assert ok


# 9 DG moments versus an unweighted-average + penalty construction ------------

def _reference_coords(m, e, x):
    v = m.vertices[m.triangles[e]]
    J = np.column_stack([v[1] - v[0], v[2] - v[0]])
    return np.linalg.solve(J, (x - v[0]).T).T


def dg_moments_oracle(u, problem, gamma, s):
    """Facet moments of -avg(grad u).n + gamma/h [u] against orthonormal Legendre polynomials."""
    m = u.space.mesh
    t, w = np.polynomial.legendre.leggauss(12)
    t, w = (t + 1) / 2, w / 2
    out = np.zeros((m.num_facets, s + 1))
    for f in range(m.num_facets):
        a, b = m.vertices[m.facets[f]]
        h = np.linalg.norm(b - a)
        x = a + t[:, None] * (b - a)
        km, kp = m.facet_elements[f]
        n = np.array([b[1] - a[1], a[0] - b[0]]) / h
        if n @ (0.5 * (a + b) - m.vertices[m.triangles[km]].mean(axis=0)) < 0:
            n = -n
        xi = _reference_coords(m, km, x)
        um, gm = u.eval(xi, [km])[0], u.grad(xi, [km])[0] @ n
        if kp >= 0:
            xi = _reference_coords(m, kp, x)
            up, gp = u.eval(xi, [kp])[0], u.grad(xi, [kp])[0] @ n
            val = -0.5 * (gm + gp) + gamma / h * (um - up)
        else:
            val = -gm + gamma / h * (um - problem.u(x[:, 0], x[:, 1]))
        q = np.stack([np.sqrt((2 * j + 1) / h) * np.polynomial.legendre.legval(2 * t - 1, np.eye(s + 1)[j])
                      for j in range(s + 1)])
        out[f] = h * (q * w) @ val
    return out


_c9 = {"n": 0, "max": 0.0}


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 31), st.floats(1.0, 50.0), st.sampled_from([-1, 0, 1]),
       st.booleans())
def test_c9_dg_moments_match_unweighted_construction(k, seed, gamma, delta, solved):
    # A = I, so both facet weights are 1/2; cubic boundary data is integrated exactly by both sides
    p = manufactured_problem(3)
    m = p.initial_mesh(2)
    params = DgParameters(gamma, delta)
    if solved:
        u, _ = solve_problem(p, m, k, "dg", params=params)
    else:
        u = LagrangeSpace(m, k, "dg").function(np.random.default_rng(seed).standard_normal(
            LagrangeSpace(m, k, "dg").ndofs))
    for s in range(k + 1):
        rec = recover(u, p, s, params=params, check=False)
        V = rec.sigma_hat.space
        got = rec.sigma_hat.values[V.facet_dofs()][:, :s + 1]
        ref = dg_moments_oracle(u, p, gamma, s)
        d = np.abs(got - ref).max() / max(1.0, np.abs(ref).max())
        _c9["n"] += 1
        _c9["max"] = max(_c9["max"], d)
        assert d <= 1e-12


def test_c9_report(record):
    # runs after the property test in file order
    ok = _c9["n"] > 0 and _c9["max"] <= 1e-12
    record(9, ok, f"{_c9['n']} recoveries compared, max relative moment difference {_c9['max']:.1e}")
    assert ok


# 10 jump identity ------------------------------------------------------------

_c10 = {"n": 0, "max": 0.0}


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_c10_jump_identity(v, am, ap):
    a_m, a_p, b_m, b_p = (np.array([x]) for x in v)
    w = FacetWeights(np.array([am]), np.array([ap]), np.array([ap / (am + ap)]), np.array([am / (am + ap)]),
                     np.array([min(am, ap)]), np.array([max(am, ap)]), np.array([min(am, ap)]))
    inter = np.array([True])
    lhs = jump(a_m * b_m, a_p * b_p, inter)
    rhs = lower_average(a_m, a_p, w) * jump(b_m, b_p, inter) + jump(a_m, a_p, inter) * upper_average(b_m, b_p, w)
    d = abs(lhs - rhs)[0] / max(1.0, max(abs(x) for x in v) ** 2)
    _c10["n"] += 1
    _c10["max"] = max(_c10["max"], d)
    assert d <= 1e-12


def test_c10_jump_identity_report(record):
    ok = _c10["n"] >= 1000 and _c10["max"] <= 1e-12
    record(10, ok, f"jump identity on {_c10['n']} tuples, max scaled defect {_c10['max']:.1e}")
    assert ok
