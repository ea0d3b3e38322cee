"""Conforming triangular meshes with facet topology and newest-vertex bisection.

Conventions
-----------
* Triangles are positively oriented and stored as ``(n1, n2, n3)`` with the
  refinement edge ``n1-n2``.
* Local facet ``i`` of a triangle is the edge opposite local vertex ``i``.
* Each facet is stored as ``(a, b)`` with ``a < b``. Its "minus" element is
  the incident element with the lower index and ``n_F`` is that element's
  outward normal; boundary facets have only a minus element.
* ``sign[K, i] = +1`` iff the outward normal of ``K`` on its facet ``i``
  equals ``n_F``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from . import _kernels

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2


class MeshError(ValueError):
    """Base class for mesh construction failures."""


class TopologyError(MeshError):
    pass


class GeometryError(MeshError):
    pass


class MeshInputError(MeshError):
    pass


@dataclass(eq=False)
class Mesh2D:
    vertices: np.ndarray          # (nV, 2)
    triangles: np.ndarray         # (nK, 3)
    region: np.ndarray            # (nK,)
    facets: np.ndarray            # (nF, 2), a < b
    facet_class: np.ndarray       # (nF,) INTERIOR / DIRICHLET / NEUMANN
    facet_elements: np.ndarray    # (nF, 2) minus, plus (-1 on the boundary)
    facet_local: np.ndarray       # (nF, 2) local facet index in minus / plus
    element_facets: np.ndarray    # (nK, 3)
    signs: np.ndarray             # (nK, 3)
    parent: np.ndarray | None = None
    jac: np.ndarray = field(init=False, repr=False)
    det: np.ndarray = field(init=False, repr=False)
    inv_jac: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = self.vertices[self.triangles]
        self.jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        self.det = self.jac[:, 0, 0] * self.jac[:, 1, 1] - self.jac[:, 0, 1] * self.jac[:, 1, 0]
        inv = np.empty_like(self.jac)
        inv[:, 0, 0] = self.jac[:, 1, 1]
        inv[:, 1, 1] = self.jac[:, 0, 0]
        inv[:, 0, 1] = -self.jac[:, 0, 1]
        inv[:, 1, 0] = -self.jac[:, 1, 0]
        self.inv_jac = inv / self.det[:, None, None]
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        self.facet_length = np.hypot(d[:, 0], d[:, 1])
        K = self.facet_elements[:, 0]
        i = self.facet_local[:, 0]
        t = self.triangles
        p = self.vertices[t[K, (i + 1) % 3]]
        q = self.vertices[t[K, (i + 2) % 3]]
        e = q - p
        self.facet_normal = np.column_stack([e[:, 1], -e[:, 0]]) / self.facet_length[:, None]
        el = self.facet_length[self.element_facets]
        self.h = el.max(axis=1)
        self.area = 0.5 * self.det

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_elements(self) -> int:
        return len(self.triangles)

    @property
    def num_facets(self) -> int:
        return len(self.facets)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_class != INTERIOR)

    @property
    def dirichlet_vertices(self) -> np.ndarray:
        """Vertices on the closure of the Dirichlet boundary."""
        return np.unique(self.facets[self.facet_class == DIRICHLET])

    def boundary_tags(self) -> np.ndarray:
        """``(B, 3)`` rows ``a, b, tag`` for all boundary facets."""
        b = self.boundary_facets
        return np.column_stack([self.facets[b], self.facet_class[b]])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def min_angle(self) -> float:
        v = self.vertices[self.triangles]
        ang = []
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            c = (a * b).sum(1) / np.hypot(*a.T) / np.hypot(*b.T)
            ang.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.min(ang))

    def vertex_elements(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR pointers and element ids of the elements around each vertex."""
        flat = self.triangles.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.num_vertices)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return ptr, order // 3


def _as_tag_array(boundary_tags) -> np.ndarray:
    if boundary_tags is None:
        return np.zeros((0, 3), dtype=np.int64)
    if isinstance(boundary_tags, Mapping):
        rows = [(a, b, t) for (a, b), t in boundary_tags.items()]
        return np.array(rows, dtype=np.int64).reshape(-1, 3)
    return np.asarray(boundary_tags, dtype=np.int64).reshape(-1, 3)


def _hanging_vertex(vertices, facets, candidates) -> bool:
    for f in candidates:
        a, b = vertices[facets[f, 0]], vertices[facets[f, 1]]
        d = b - a
        w = vertices - a
        t = (w @ d) / (d @ d)
        cross = np.abs(w[:, 0] * d[1] - w[:, 1] * d[0]) / np.sqrt(d @ d)
        on = (t > 1e-12) & (t < 1 - 1e-12) & (cross < 1e-12 * np.sqrt(d @ d))
        if on.any():
            return True
    return False


def build_mesh(vertices, triangles, boundary_tags, region=None, parent=None,
               require_dirichlet: bool = True) -> Mesh2D:
    """Build the facet topology of a conforming triangulation.

    Parameters
    ----------
    vertices : (nV, 2) array_like
    triangles : (nK, 3) array_like of vertex indices, positively oriented.
    boundary_tags : mapping ``(a, b) -> tag`` or ``(B, 3)`` rows ``a, b, tag``
        with tag 1 (Dirichlet) or 2 (Neumann), covering every boundary facet.
    region : (nK,) region ids, default all zero.
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshInputError("vertices must have shape (N, 2)")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshInputError("triangles must have shape (M, 3)")
    nV, nK = len(vertices), len(triangles)
    if nK == 0:
        raise MeshInputError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= nV:
        raise MeshInputError("triangle references a vertex index out of range")
    region = np.zeros(nK, dtype=np.int64) if region is None else np.asarray(region, dtype=np.int64)
    if region.shape != (nK,):
        raise MeshInputError("region must have one entry per triangle")

    v = vertices[triangles]
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    scale = np.maximum((e1 * e1).sum(1), (e2 * e2).sum(1))
    bad = det <= 1e-14 * scale
    if bad.any():
        raise GeometryError(f"triangle {int(np.flatnonzero(bad)[0])} has zero or negative area")

    loc = np.stack([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1)
    lo = loc.min(axis=2).ravel()
    hi = loc.max(axis=2).ravel()
    keys = lo * nV + hi
    ukeys, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    if (counts > 2).any():
        raise TopologyError("a facet is shared by more than two triangles")
    nF = len(ukeys)
    facets = np.column_stack([ukeys // nV, ukeys % nV])
    element_facets = inv.reshape(nK, 3)

    # occurrences are enumerated element-major, so a stable sort puts the
    # lower element index first
    order = np.argsort(inv, kind="stable")
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    occ_first = order[first]
    facet_elements = np.full((nF, 2), -1, dtype=np.int64)
    facet_local = np.full((nF, 2), -1, dtype=np.int64)
    facet_elements[:, 0] = occ_first // 3
    facet_local[:, 0] = occ_first % 3
    two = counts == 2
    occ_second = order[first[two] + 1]
    facet_elements[two, 1] = occ_second // 3
    facet_local[two, 1] = occ_second % 3

    signs = -np.ones((nK, 3), dtype=np.int64)
    signs[facet_elements[:, 0], facet_local[:, 0]] = 1

    facet_class = np.zeros(nF, dtype=np.int8)
    bnd = np.flatnonzero(~two)
    tags = _as_tag_array(boundary_tags)
    tagged = np.zeros(nF, dtype=bool)
    if len(tags):
        tlo = np.minimum(tags[:, 0], tags[:, 1])
        thi = np.maximum(tags[:, 0], tags[:, 1])
        if tlo.min() < 0 or thi.max() >= nV:
            raise MeshInputError("boundary tag references a vertex index out of range")
        tkeys = tlo * nV + thi
        pos = np.searchsorted(ukeys, tkeys)
        pos = np.minimum(pos, nF - 1)
        found = ukeys[pos] == tkeys
        if not found.all():
            raise MeshInputError("boundary tag given for an edge that is not a mesh facet")
        if two[pos].any():
            raise MeshInputError("boundary tag given for an interior facet")
        if not np.isin(tags[:, 2], (DIRICHLET, NEUMANN)).all():
            raise MeshInputError("boundary tags must be 1 (Dirichlet) or 2 (Neumann)")
        facet_class[pos] = tags[:, 2]
        tagged[pos] = True
    missing = bnd[~tagged[bnd]]
    if len(missing):
        if _hanging_vertex(vertices, facets, missing):
            raise TopologyError("mesh is not conforming (hanging vertex)")
        raise MeshInputError(f"{len(missing)} boundary facet(s) have no boundary tag")
    if require_dirichlet and not (facet_class == DIRICHLET).any():
        raise MeshInputError("the Dirichlet boundary must be nonempty")

    return Mesh2D(vertices=vertices, triangles=triangles, region=region, facets=facets,
                  facet_class=facet_class, facet_elements=facet_elements,
                  facet_local=facet_local, element_facets=element_facets, signs=signs,
                  parent=None if parent is None else np.asarray(parent, dtype=np.int64))


def refine(mesh: Mesh2D, marked: Iterable[int]) -> Mesh2D:
    """Newest-vertex bisection of the marked elements with conforming closure.

    Every marked element is split into four children (all three edges
    bisected); neighbours are bisected as needed to remove hanging vertices.
    Region ids and boundary tags are inherited from parents.
    """
    marked = np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                        dtype=np.int64)
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.num_elements):
        raise IndexError("marked element id out of range")
    edge_marks = np.zeros(mesh.num_facets, dtype=bool)
    edge_marks[mesh.element_facets[marked].ravel()] = True
    edge_marks = _kernels.nvb_closure(mesh.element_facets, edge_marks)

    split = np.flatnonzero(edge_marks)
    midpoint = np.full(mesh.num_facets, -1, dtype=np.int64)
    midpoint[split] = mesh.num_vertices + np.arange(len(split))
    new_xy = 0.5 * (mesh.vertices[mesh.facets[split, 0]] + mesh.vertices[mesh.facets[split, 1]])
    vertices = np.vstack([mesh.vertices, new_xy])

    triangles, parent = _kernels.nvb_bisect(mesh.triangles, mesh.element_facets, midpoint)

    b = mesh.boundary_facets
    bs = b[edge_marks[b]]
    bk = b[~edge_marks[b]]
    tags = np.vstack([
        np.column_stack([mesh.facets[bk], mesh.facet_class[bk]]),
        np.column_stack([mesh.facets[bs, 0], midpoint[bs], mesh.facet_class[bs]]),
        np.column_stack([midpoint[bs], mesh.facets[bs, 1], mesh.facet_class[bs]]),
    ])
    return build_mesh(vertices, triangles, tags, region=mesh.region[parent], parent=parent,
                      require_dirichlet=False)


def refine_uniform(mesh: Mesh2D, times: int = 1) -> Mesh2D:
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.num_elements))
    return mesh


# ---------------------------------------------------------------------------
# vertex patches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VertexPatch:
    vertex: int
    elements: tuple[int, ...]
    hat_elements: tuple[int, ...]
    anchor_element: int


def patch_anchors(mesh: Mesh2D, lam: np.ndarray) -> np.ndarray:
    """For each vertex, the lowest-index element attaining the patch max of ``lam``."""
    flat_v = mesh.triangles.ravel()
    flat_e = np.repeat(np.arange(mesh.num_elements), 3)
    order = np.lexsort((flat_e, -lam[flat_e], flat_v))
    v_sorted = flat_v[order]
    first = np.concatenate([[True], v_sorted[1:] != v_sorted[:-1]])
    anchors = np.full(mesh.num_vertices, -1, dtype=np.int64)
    anchors[v_sorted[first]] = flat_e[order][first]
    return anchors


def vertex_patches(mesh: Mesh2D, coeff) -> list[VertexPatch]:
    lam = coeff.lam_max if hasattr(coeff, "lam_max") else np.asarray(coeff, dtype=float)
    ptr, elems = mesh.vertex_elements()
    anchors = patch_anchors(mesh, lam)
    out = []
    for z in range(mesh.num_vertices):
        els = np.sort(elems[ptr[z]:ptr[z + 1]])
        if len(els) == 0:
            continue
        top = lam[els].max()
        hat = els[lam[els] == top]
        out.append(VertexPatch(z, tuple(int(e) for e in els), tuple(int(e) for e in hat),
                               int(anchors[z])))
    return out


# ---------------------------------------------------------------------------
# structured generators
# ---------------------------------------------------------------------------


def _grid_vertices(x0, x1, y0, y1, nx, ny):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def _boundary_from_triangles(triangles, nV) -> np.ndarray:
    loc = np.concatenate([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]])
    lo, hi = loc.min(1), loc.max(1)
    keys, counts = np.unique(lo * nV + hi, return_counts=True)
    keys = keys[counts == 1]
    return np.column_stack([keys // nV, keys % nV])


def structured_mesh(x0: float, x1: float, y0: float, y1: float, nx: int, ny: int,
                    pattern: str = "crisscross",
                    keep: Callable[[np.ndarray], np.ndarray] | None = None,
                    region_fn: Callable[[np.ndarray], np.ndarray] | None = None,
                    tag_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> Mesh2D:
    """Rectangle ``[x0,x1]x[y0,y1]`` with ``nx*ny`` cells.

    ``pattern`` is ``"crisscross"`` (four triangles per cell around the cell
    centre) or ``"diagonal"`` (two triangles per cell). ``keep`` filters cells
    by centre, ``region_fn`` maps element centroids to region ids and
    ``tag_fn`` maps boundary-facet midpoints to tags (default Dirichlet).
    The refinement edge of every triangle is its longest edge.
    """
    grid = _grid_vertices(x0, x1, y0, y1, nx, ny)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    c00, c10, c11, c01 = idx[I, J], idx[I + 1, J], idx[I + 1, J + 1], idx[I, J + 1]
    centres = 0.5 * (grid[c00] + grid[c11])
    sel = np.ones(len(I), dtype=bool) if keep is None else np.asarray(keep(centres), dtype=bool)
    c00, c10, c11, c01, centres = c00[sel], c10[sel], c11[sel], c01[sel], centres[sel]
    if pattern == "crisscross":
        ctr = len(grid) + np.arange(len(c00))
        verts = np.vstack([grid, centres])
        tris = np.stack([
            np.column_stack([c00, c10, ctr]),
            np.column_stack([c10, c11, ctr]),
            np.column_stack([c11, c01, ctr]),
            np.column_stack([c01, c00, ctr]),
        ], axis=1).reshape(-1, 3)
    elif pattern == "diagonal":
        verts = grid
        tris = np.stack([
            np.column_stack([c11, c00, c10]),
            np.column_stack([c00, c11, c01]),
        ], axis=1).reshape(-1, 3)
    else:
        raise ValueError(f"unknown pattern {pattern!r}")

    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    tris = remap[tris]

    bnd = _boundary_from_triangles(tris, len(verts))
    mids = 0.5 * (verts[bnd[:, 0]] + verts[bnd[:, 1]])
    tags = np.full(len(bnd), DIRICHLET) if tag_fn is None else np.asarray(tag_fn(mids), dtype=np.int64)
    cents = verts[tris].mean(axis=1)
    region = None if region_fn is None else np.asarray(region_fn(cents), dtype=np.int64)
    return build_mesh(verts, tris, np.column_stack([bnd, tags]), region=region)


def square_mesh(n: int = 1, **kw) -> Mesh2D:
    """``(-1, 1)^2`` with ``2n x 2n`` cells (cell edges on the axes)."""
    return structured_mesh(-1.0, 1.0, -1.0, 1.0, 2 * n, 2 * n, **kw)


def lshape_mesh(n: int = 1, **kw) -> Mesh2D:
    """``(-1,1)^2 minus [0,1]x[-1,0]`` with ``3 n^2`` cells."""
    return structured_mesh(-1.0, 1.0, -1.0, 1.0, 2 * n, 2 * n,
                           keep=lambda c: ~((c[:, 0] > 0) & (c[:, 1] < 0)), **kw)


def unit_square_mesh(n: int = 1, **kw) -> Mesh2D:
    return structured_mesh(0.0, 1.0, 0.0, 1.0, n, n, **kw)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def write_mesh(mesh: Mesh2D, path) -> None:
    lines = [f"vertices {mesh.num_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.num_elements}")
    lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(mesh.triangles.tolist(), mesh.region.tolist())]
    tags = mesh.boundary_tags()
    lines.append(f"boundary {len(tags)}")
    lines += [f"{a} {b} {t}" for a, b, t in tags.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


class MeshParseError(MeshInputError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def read_mesh(path) -> Mesh2D:
    raw = Path(path).read_text().splitlines()
    pos = 0

    def header(name):
        nonlocal pos
        while pos < len(raw) and not raw[pos].strip():
            pos += 1
        if pos >= len(raw):
            raise MeshParseError(pos + 1, f"expected '{name} <count>', got end of file")
        parts = raw[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshParseError(pos + 1, f"expected '{name} <count>'")
        try:
            n = int(parts[1])
        except ValueError:
            raise MeshParseError(pos + 1, f"bad count {parts[1]!r}") from None
        pos += 1
        return n

    def rows(n, width, conv):
        nonlocal pos
        out = []
        for _ in range(n):
            if pos >= len(raw):
                raise MeshParseError(pos + 1, "unexpected end of file")
            parts = raw[pos].split()
            if len(parts) != width:
                raise MeshParseError(pos + 1, f"expected {width} fields, got {len(parts)}")
            try:
                out.append([conv(p) for p in parts])
            except ValueError:
                raise MeshParseError(pos + 1, "could not parse number") from None
            pos += 1
        return out

    nv = header("vertices")
    verts = np.array(rows(nv, 2, float), dtype=float).reshape(-1, 2)
    nt = header("triangles")
    tr = np.array(rows(nt, 4, int), dtype=np.int64).reshape(-1, 4)
    nb = header("boundary")
    bd = np.array(rows(nb, 3, int), dtype=np.int64).reshape(-1, 3)
    return build_mesh(verts, tr[:, :3], bd, region=tr[:, 3])
