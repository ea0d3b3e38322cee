"""Hot loops with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``EARM_USE_NUMBA`` is not set
to ``0``. Both paths return identical arrays; tests run them side by side and
``benchmarks/bench_kernels.py`` times them.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("EARM_USE_NUMBA", "1") not in ("0", "false", "no")

if HAVE_NUMBA and os.environ.get("EARM_THREADS"):
    try:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # threading-layer probes warn about optional TBB
            numba.set_num_threads(max(1, min(int(os.environ["EARM_THREADS"]), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        pass


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# newest-vertex bisection
#
# Triangles are stored (n1, n2, n3) with refinement edge n1-n2, which is
# local facet 2. Local facet 0 is n2-n3, local facet 1 is n3-n1.
# ---------------------------------------------------------------------------


def nvb_closure_np(element_facets: np.ndarray, marked: np.ndarray) -> np.ndarray:
    marked = marked.copy()
    ref = element_facets[:, 2]
    while True:
        need = marked[element_facets].any(axis=1) & ~marked[ref]
        if not need.any():
            return marked
        marked[ref[need]] = True


@_njit
def _nvb_closure_nb(element_facets, marked):
    out = marked.copy()
    n = element_facets.shape[0]
    changed = True
    while changed:
        changed = False
        for e in range(n):
            r = element_facets[e, 2]
            if out[r]:
                continue
            if out[element_facets[e, 0]] or out[element_facets[e, 1]]:
                out[r] = True
                changed = True
    return out


def nvb_closure_nb(element_facets: np.ndarray, marked: np.ndarray) -> np.ndarray:
    return _nvb_closure_nb(np.ascontiguousarray(element_facets, dtype=np.int64),
                           np.ascontiguousarray(marked, dtype=np.bool_))


def nvb_bisect_np(triangles: np.ndarray, element_facets: np.ndarray,
                  midpoint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split triangles according to the marked facets.

    ``midpoint[f]`` is the new vertex on facet ``f`` or -1. Returns the child
    triangles and each child's parent, children of one parent contiguous and
    parents in increasing order.
    """
    n1, n2, n3 = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    m12 = midpoint[element_facets[:, 2]]
    m23 = midpoint[element_facets[:, 0]]
    m31 = midpoint[element_facets[:, 1]]
    ref = m12 >= 0
    left = ref & (m31 >= 0)
    right = ref & (m23 >= 0)

    nchild = np.where(ref, 2 + left.astype(np.int64) + right.astype(np.int64), 1)
    start = np.concatenate([[0], np.cumsum(nchild)[:-1]])
    out = np.empty((int(nchild.sum()), 3), dtype=np.int64)
    parent = np.repeat(np.arange(len(triangles), dtype=np.int64), nchild)

    keep = ~ref
    out[start[keep]] = triangles[keep]

    # first child [n3, n1, m12], possibly split at m31
    e = np.flatnonzero(ref & ~left)
    out[start[e]] = np.column_stack([n3[e], n1[e], m12[e]])
    e = np.flatnonzero(left)
    out[start[e]] = np.column_stack([m12[e], n3[e], m31[e]])
    out[start[e] + 1] = np.column_stack([n1[e], m12[e], m31[e]])

    # second child [n2, n3, m12], possibly split at m23
    off = start + 1 + left.astype(np.int64)
    e = np.flatnonzero(ref & ~right)
    out[off[e]] = np.column_stack([n2[e], n3[e], m12[e]])
    e = np.flatnonzero(right)
    out[off[e]] = np.column_stack([m12[e], n2[e], m23[e]])
    out[off[e] + 1] = np.column_stack([n3[e], m12[e], m23[e]])
    return out, parent


@_njit
def _nvb_bisect_nb(triangles, element_facets, midpoint):
    n = triangles.shape[0]
    count = 0
    for e in range(n):
        if midpoint[element_facets[e, 2]] < 0:
            count += 1
        else:
            count += 2
            if midpoint[element_facets[e, 1]] >= 0:
                count += 1
            if midpoint[element_facets[e, 0]] >= 0:
                count += 1
    out = np.empty((count, 3), dtype=np.int64)
    parent = np.empty(count, dtype=np.int64)
    c = 0
    for e in range(n):
        a = triangles[e, 0]
        b = triangles[e, 1]
        d = triangles[e, 2]
        m12 = midpoint[element_facets[e, 2]]
        if m12 < 0:
            out[c, 0] = a
            out[c, 1] = b
            out[c, 2] = d
            parent[c] = e
            c += 1
            continue
        m31 = midpoint[element_facets[e, 1]]
        m23 = midpoint[element_facets[e, 0]]
        if m31 < 0:
            out[c, 0] = d
            out[c, 1] = a
            out[c, 2] = m12
            parent[c] = e
            c += 1
        else:
            out[c, 0] = m12
            out[c, 1] = d
            out[c, 2] = m31
            out[c + 1, 0] = a
            out[c + 1, 1] = m12
            out[c + 1, 2] = m31
            parent[c] = e
            parent[c + 1] = e
            c += 2
        if m23 < 0:
            out[c, 0] = b
            out[c, 1] = d
            out[c, 2] = m12
            parent[c] = e
            c += 1
        else:
            out[c, 0] = m12
            out[c, 1] = b
            out[c, 2] = m23
            out[c + 1, 0] = d
            out[c + 1, 1] = m12
            out[c + 1, 2] = m23
            parent[c] = e
            parent[c + 1] = e
            c += 2
    return out, parent


def nvb_bisect_nb(triangles, element_facets, midpoint):
    return _nvb_bisect_nb(np.ascontiguousarray(triangles, dtype=np.int64),
                          np.ascontiguousarray(element_facets, dtype=np.int64),
                          np.ascontiguousarray(midpoint, dtype=np.int64))


# ---------------------------------------------------------------------------
# batched local matrices
# ---------------------------------------------------------------------------


def weighted_gram_np(left: np.ndarray, right: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """out[e, i, j] = sum_q sum_c weights[e, q] * left[e, q, i, c] * right[e, q, j, c]."""
    return np.einsum("eq,eqic,eqjc->eij", weights, left, right, optimize=True)


@_njit
def _weighted_gram_nb(left, right, weights):
    ne, nq, ni, nc = left.shape
    nj = right.shape[2]
    out = np.zeros((ne, ni, nj))
    for e in range(ne):
        for q in range(nq):
            w = weights[e, q]
            for i in range(ni):
                for j in range(nj):
                    acc = 0.0
                    for c in range(nc):
                        acc += left[e, q, i, c] * right[e, q, j, c]
                    out[e, i, j] += w * acc
    return out


def weighted_gram_nb(left, right, weights):
    return _weighted_gram_nb(np.ascontiguousarray(left, dtype=np.float64),
                             np.ascontiguousarray(right, dtype=np.float64),
                             np.ascontiguousarray(weights, dtype=np.float64))


if USE_NUMBA:
    nvb_closure = nvb_closure_nb
    nvb_bisect = nvb_bisect_nb
    weighted_gram = weighted_gram_nb
else:
    nvb_closure = nvb_closure_np
    nvb_bisect = nvb_bisect_np
    weighted_gram = weighted_gram_np


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
