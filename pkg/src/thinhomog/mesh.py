"""Structured triangulations of reference cells and thin domains.

Both mesh kinds come from the same mapped-grid construction: columns of
vertices at prescribed x stations, stacked uniformly up to a per-column
height, each quad split along its lower-left to upper-right diagonal.  The
structure (column stations + heights) is kept on the mesh so that point
location and P1 interpolation stay O(1) per query instead of a triangle
search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOTTOM, TOP, LEFT, RIGHT = "BOTTOM", "TOP", "LEFT", "RIGHT"


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray        # (nv, 2)
    triangles: np.ndarray       # (nt, 3) counterclockwise
    boundary_edges: np.ndarray  # (ne, 2) vertex pairs
    boundary_tags: np.ndarray   # (ne,) strings from {BOTTOM, TOP, LEFT, RIGHT}
    periodic_pairs: np.ndarray  # (np, 2) LEFT/RIGHT vertex pairs, empty for thin meshes
    # structured layout: column stations and per-column heights, rows 0..n_rows
    col_x: np.ndarray           # (nc+1,)
    col_height: np.ndarray      # (nc+1,)
    n_rows: int

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def vertex_index(self, i: int, j: int) -> int:
        return i * (self.n_rows + 1) + j

    def write_text(self, stream):
        """Plain-text export: 'v x y', 't i j k' and 'e i j TAG' lines."""
        for x, y in self.vertices:
            stream.write(f"v {x!r} {y!r}\n")
        for a, b, c in self.triangles:
            stream.write(f"t {a} {b} {c}\n")
        for (a, b), tag in zip(self.boundary_edges, self.boundary_tags):
            stream.write(f"e {a} {b} {tag}\n")


def _build_mapped(col_x: np.ndarray, col_height: np.ndarray, n_rows: int,
                  periodic: bool) -> TriMesh:
    if np.any(col_height < 1e-12):
        raise MeshError("degenerate cell: height underflows 1e-12")
    nc = len(col_x) - 1
    nj = n_rows + 1
    fractions = np.arange(nj) / n_rows
    xs = np.repeat(col_x, nj)
    ys = (col_height[:, None] * fractions[None, :]).ravel()
    vertices = np.column_stack([xs, ys])

    ii, jj = np.meshgrid(np.arange(nc), np.arange(n_rows), indexing="ij")
    v00 = (ii * nj + jj).ravel()
    v10 = ((ii + 1) * nj + jj).ravel()
    v11 = ((ii + 1) * nj + jj + 1).ravel()
    v01 = (ii * nj + jj + 1).ravel()
    # split along the lower-left -> upper-right diagonal, fixed orientation
    tris = np.empty((2 * nc * n_rows, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])

    edges = []
    tags = []
    for i in range(nc):
        edges.append((i * nj, (i + 1) * nj))
        tags.append(BOTTOM)
    for i in range(nc):
        edges.append((i * nj + n_rows, (i + 1) * nj + n_rows))
        tags.append(TOP)
    for j in range(n_rows):
        edges.append((j, j + 1))
        tags.append(LEFT)
    for j in range(n_rows):
        edges.append((nc * nj + j, nc * nj + j + 1))
        tags.append(RIGHT)

    if periodic:
        pairs = np.column_stack([np.arange(nj), nc * nj + np.arange(nj)])
    else:
        pairs = np.empty((0, 2), dtype=np.int64)

    return TriMesh(
        vertices=vertices,
        triangles=tris,
        boundary_edges=np.asarray(edges, dtype=np.int64),
        boundary_tags=np.asarray(tags, dtype=object),
        periodic_pairs=pairs.astype(np.int64),
        col_x=np.asarray(col_x, dtype=float),
        col_height=np.asarray(col_height, dtype=float),
        n_rows=n_rows,
    )


def mesh_cell(cell, n1: int, n2: int) -> TriMesh:
    """Triangulate one reference cell with n1 x n2 mapped quads.

    Columns sit at ``i/n1 * period``; the lateral vertex stacks coincide in
    height because the profile closes over one period, so LEFT/RIGHT vertices
    pair up exactly for the periodic constraint.
    """
    if n1 < 2 or n2 < 2:
        raise ValueError("cell meshes need n1, n2 >= 2")
    col_x = np.arange(n1 + 1) / n1 * cell.period
    heights = np.asarray(cell.height(col_x), dtype=float)
    # enforce exact closure so periodic pairs share identical coordinates
    heights[-1] = heights[0]
    return _build_mapped(col_x, heights, n2, periodic=True)


def mesh_thin(spec, eps: float, n_per: int, ny: int, partition=None) -> TriMesh:
    """Triangulate the thin domain with ``n_per`` columns per partition interval.

    Column stations include every partition breakpoint, so the piecewise
    quantities attached to the partition are constant on whole columns.
    """
    if n_per < 8:
        raise ValueError("n_per must be at least 8")
    if ny < 4:
        raise ValueError("ny must be at least 4")
    if partition is None:
        from .geometry import build_partition
        partition = build_partition(spec, eps)
    pts = partition.points
    cols = [np.array([0.0])]
    for k in range(partition.n_intervals):
        seg = pts[k] + (np.arange(1, n_per + 1) / n_per) * (pts[k + 1] - pts[k])
        seg[-1] = pts[k + 1]
        cols.append(seg)
    col_x = np.concatenate(cols)
    heights = np.asarray(spec.thin_height(eps, col_x), dtype=float)
    return _build_mapped(col_x, heights, ny, periodic=False)


def mesh_area(mesh: TriMesh) -> float:
    """Total area as the sum of (positive) signed triangle areas."""
    return float(np.sum(triangle_areas(mesh)))


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    p = mesh.vertices
    a, b, c = (p[mesh.triangles[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def triangle_quad_points(mesh: TriMesh):
    """Edge-midpoint quadrature (exact for quadratics): points and weights.

    Returns ``(qx, qy, w)`` flattened over all triangles, three points each
    with weight area/3.
    """
    p = mesh.vertices
    a, b, c = (p[mesh.triangles[:, k]] for k in range(3))
    mids = np.stack([(a + b) / 2, (b + c) / 2, (c + a) / 2], axis=1)  # (nt, 3, 2)
    w = np.repeat(triangle_areas(mesh) / 3.0, 3)
    pts = mids.reshape(-1, 2)
    return pts[:, 0], pts[:, 1], w


def structured_interp(mesh: TriMesh, nodal: np.ndarray, px: np.ndarray, py: np.ndarray,
                      want_grad: bool = False):
    """Evaluate the P1 interpolant of ``nodal`` values at points (px, py).

    Point location exploits the mapped-grid structure: a column lookup, a
    row from the linearly blended column heights, then the diagonal test.
    Points slightly outside the mesh polygon evaluate the nearest element's
    affine extension; callers that need the exact domain mask apply it
    themselves.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    nj = mesh.n_rows + 1
    nc = len(mesh.col_x) - 1

    i = np.clip(np.searchsorted(mesh.col_x, px, side="right") - 1, 0, nc - 1)
    x0 = mesh.col_x[i]
    x1 = mesh.col_x[i + 1]
    h0 = mesh.col_height[i]
    h1 = mesh.col_height[i + 1]
    t = (px - x0) / (x1 - x0)
    hbar = (1.0 - t) * h0 + t * h1
    j = np.clip(np.floor(py * mesh.n_rows / hbar).astype(np.int64), 0, mesh.n_rows - 1)

    y00 = j * h0 / mesh.n_rows
    y10 = j * h1 / mesh.n_rows
    y11 = (j + 1) * h1 / mesh.n_rows
    y01 = (j + 1) * h0 / mesh.n_rows

    upper = (x1 - x0) * (py - y00) - (y11 - y00) * (px - x0) > 0.0

    i00 = i * nj + j
    i10 = (i + 1) * nj + j
    i11 = (i + 1) * nj + j + 1
    i01 = i * nj + j + 1

    # triangle (A, B, C) = lower (v00, v10, v11) or upper (v00, v11, v01);
    # B sits on the x1 column either way
    ax, ay = x0, y00
    bx = x1
    by = np.where(upper, y11, y10)
    cx = np.where(upper, x0, x1)
    cy = np.where(upper, y01, y11)
    va = nodal[i00]
    vb = np.where(upper, nodal[i11], nodal[i10])
    vc = np.where(upper, nodal[i01], nodal[i11])

    det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
    lb = ((px - ax) * (cy - ay) - (py - ay) * (cx - ax)) / det
    lc = ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) / det
    la = 1.0 - lb - lc
    values = la * va + lb * vb + lc * vc
    if not want_grad:
        return values
    gx = ((vb - va) * (cy - ay) - (vc - va) * (by - ay)) / det
    gy = ((vc - va) * (bx - ax) - (vb - va) * (cx - ax)) / det
    return values, gx, gy
