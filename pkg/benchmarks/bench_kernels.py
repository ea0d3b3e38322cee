"""Time the numba and numpy paths of the hot kernels side by side.

Usage: python3 benchmarks/bench_kernels.py [--cells N] [--repeat R]

Both paths are imported from ``earm._kernels`` regardless of
``EARM_USE_NUMBA``; the first numba call (compilation) is excluded.
"""
import argparse
import time

import numpy as np

from earm import _kernels as kr
from earm.mesh import refine_uniform, square_mesh


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, default=100_000, help="approximate mesh size")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kr.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    mesh = square_mesh(1)
    while mesh.num_elements * 4 <= args.cells:
        mesh = refine_uniform(mesh)
    rng = np.random.default_rng(0)
    nF, nK = mesh.num_facets, mesh.num_elements

    # closure from a sparse random marking
    marks = np.zeros(nF, dtype=bool)
    marks[mesh.element_facets[rng.choice(nK, max(1, nK // 50), replace=False)].ravel()] = True
    closed = kr.nvb_closure_np(mesh.element_facets, marks)
    midpoint = np.full(nF, -1, dtype=np.int64)
    split = np.flatnonzero(closed)
    midpoint[split] = mesh.num_vertices + np.arange(len(split))

    # facet-mass-like batched Gram: 6 dofs, 8 points
    left = rng.standard_normal((nF, 8, 6, 1))
    right = rng.standard_normal((nF, 8, 6, 1))
    w = rng.random((nF, 8))

    cases = [
        ("nvb_closure", lambda: kr.nvb_closure_np(mesh.element_facets, marks),
         lambda: kr.nvb_closure_nb(mesh.element_facets, marks)),
        ("nvb_bisect", lambda: kr.nvb_bisect_np(mesh.triangles, mesh.element_facets, midpoint),
         lambda: kr.nvb_bisect_nb(mesh.triangles, mesh.element_facets, midpoint)),
        ("weighted_gram", lambda: kr.weighted_gram_np(left, right, w),
         lambda: kr.weighted_gram_nb(left, right, w)),
    ]
    print(f"mesh: {nK} cells, {nF} facets; best of {args.repeat}")
    print(f"{'kernel':<15}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}  agree")
    for name, f_np, f_nb in cases:
        f_nb()  # compile / load cache
        t_np, r_np = best_of(f_np, args.repeat)
        t_nb, r_nb = best_of(f_nb, args.repeat)
        if isinstance(r_np, tuple):
            same = all(np.array_equal(a, b) for a, b in zip(r_np, r_nb))
        elif r_np.dtype == bool:
            same = np.array_equal(r_np, r_nb)
        else:
            same = np.allclose(r_np, r_nb, rtol=1e-13, atol=1e-13)
        print(f"{name:<15}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.2f}  {same}")


if __name__ == "__main__":
    main()
