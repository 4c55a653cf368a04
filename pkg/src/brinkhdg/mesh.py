"""Structured meshes of the unit square with facet connectivity.

Cells are affine images of a reference element (unit triangle or unit
square).  Facets are stored once, with a canonical vertex order (lower
vertex index first) and a unit normal oriented from the lower-indexed
incident cell to the higher-indexed one; on the boundary the normal
points out of the domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QUAD = "quad"
TRIANGLE = "triangle"

REF_MEASURE = {QUAD: 1.0, TRIANGLE: 0.5}

_DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class AffineMap:
    """Affine cell map x = offset + jacobian @ x_ref with constant jacobian."""

    offset: np.ndarray
    jacobian: np.ndarray
    det: float
    inverse_jacobian: np.ndarray

    def apply(self, ref_points):
        return self.offset + np.asarray(ref_points, float) @ self.jacobian.T

    def pull_back(self, points):
        return (np.asarray(points, float) - self.offset) @ self.inverse_jacobian.T


@dataclass(frozen=True)
class FacetGeometry:
    normal: np.ndarray
    tangent: np.ndarray
    length: float
    midpoint: np.ndarray


class Mesh:
    """Conforming 2D mesh made of one cell kind (triangles or quads).

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3 or 4) int array, counterclockwise vertex ordering
    cell_kind : "triangle" or "quad"
    facet_vertices : (nf, 2) int array, canonical order v0 < v1
    facet_cells : (nf, 2) int array, (owner, neighbor), neighbor -1 on boundary;
        the owner is always the lower-indexed incident cell
    facet_normals, facet_tangents : (nf, 2) float arrays; the tangent runs
        from the lower-numbered vertex to the higher one, the normal points
        from owner to neighbor (outward on the boundary)
    cell_facets : (nc, facets per cell) int array, local facets in the order
        of the cell's edge loop
    cell_facet_signs : same shape, +1 where the stored facet normal is
        outward for that cell, -1 otherwise
    """

    def __init__(self, vertices, cells, cell_kind, structured_n=None):
        if cell_kind not in (QUAD, TRIANGLE):
            raise ValueError(f"unknown cell kind: {cell_kind!r}")
        self.vertices = np.array(vertices, dtype=float)
        self.cells = np.array(cells, dtype=int)
        self.cell_kind = cell_kind
        self.structured_n = structured_n
        npc = 3 if cell_kind == TRIANGLE else 4
        if self.cells.ndim != 2 or self.cells.shape[1] != npc:
            raise ValueError("cell array shape does not match cell kind")
        self._build_facets()
        for arr in (self.vertices, self.cells, self.facet_vertices,
                    self.facet_cells, self.facet_normals, self.facet_tangents,
                    self.facet_lengths, self.facet_midpoints, self.cell_facets,
                    self.cell_facet_signs, self.interior_facets,
                    self.boundary_facets, self.interior_index):
            arr.setflags(write=False)

    # -- construction -------------------------------------------------

    def _build_facets(self):
        nc, npc = self.cells.shape
        edge_ids = {}
        fverts = []
        fcells = []
        cell_facets = np.empty((nc, npc), dtype=int)
        for c in range(nc):
            loop = self.cells[c]
            for le in range(npc):
                a, b = int(loop[le]), int(loop[(le + 1) % npc])
                key = (a, b) if a < b else (b, a)
                fid = edge_ids.get(key)
                if fid is None:
                    fid = len(fverts)
                    edge_ids[key] = fid
                    fverts.append(key)
                    fcells.append([c, -1])
                else:
                    if fcells[fid][1] != -1:
                        raise ValueError("facet shared by more than two cells")
                    fcells[fid][1] = c
                cell_facets[c, le] = fid
        self.cell_facets = cell_facets
        self.facet_vertices = np.array(fverts, dtype=int)
        fcells = np.array(fcells, dtype=int)
        # owner = lower incident cell index
        swap = (fcells[:, 1] != -1) & (fcells[:, 1] < fcells[:, 0])
        fcells[swap] = fcells[swap][:, ::-1]
        self.facet_cells = fcells

        p0 = self.vertices[self.facet_vertices[:, 0]]
        p1 = self.vertices[self.facet_vertices[:, 1]]
        d = p1 - p0
        lengths = np.hypot(d[:, 0], d[:, 1])
        if np.any(lengths <= 0.0):
            raise ValueError("zero-length facet")
        tangents = d / lengths[:, None]
        normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
        mids = 0.5 * (p0 + p1)
        # orient outward with respect to the owner cell
        owner_centroid = self.vertices[self.cells[fcells[:, 0]]].mean(axis=1)
        flip = np.einsum("fi,fi->f", normals, mids - owner_centroid) < 0.0
        normals[flip] *= -1.0
        self.facet_normals = normals
        self.facet_tangents = tangents
        self.facet_lengths = lengths
        self.facet_midpoints = mids

        owner_of = fcells[:, 0]
        self.cell_facet_signs = np.where(
            owner_of[cell_facets] == np.arange(nc)[:, None], 1, -1
        ).astype(np.int8)
        self.interior_facets = np.nonzero(fcells[:, 1] != -1)[0]
        self.boundary_facets = np.nonzero(fcells[:, 1] == -1)[0]
        interior_index = np.full(len(fverts), -1, dtype=int)
        interior_index[self.interior_facets] = np.arange(len(self.interior_facets))
        self.interior_index = interior_index

    # -- basic queries -------------------------------------------------

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_facets(self):
        return self.facet_vertices.shape[0]

    @property
    def facets_per_cell(self):
        return self.cells.shape[1]

    @property
    def ref_measure(self):
        return REF_MEASURE[self.cell_kind]

    def cell_diameter(self, c):
        pts = self.vertices[self.cells[c]]
        n = pts.shape[0]
        return max(
            float(np.hypot(*(pts[i] - pts[j])))
            for i in range(n) for j in range(i + 1, n)
        )

    def max_diameter(self):
        return max(self.cell_diameter(c) for c in range(self.num_cells))


def affine_map(mesh, c):
    """Affine map of cell c; raises ValueError on degenerate/non-affine cells."""
    verts = mesh.vertices[mesh.cells[c]]
    if mesh.cell_kind == TRIANGLE:
        jac = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
    else:
        jac = np.column_stack([verts[1] - verts[0], verts[3] - verts[0]])
        # the map is affine only if the quad is a parallelogram
        closure = verts[0] + jac[:, 0] + jac[:, 1]
        scale = max(np.abs(jac).max(), 1e-300)
        if np.abs(closure - verts[2]).max() > 1e-9 * scale:
            raise ValueError(f"cell {c} is not a parallelogram; affine map undefined")
    det = float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    scale = float(np.abs(jac).max()) ** 2
    if det <= _DEGENERATE_RTOL * max(scale, 1e-300):
        raise ValueError(f"cell {c} is degenerate or inverted (det={det:.3e})")
    inv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det
    return AffineMap(offset=verts[0].copy(), jacobian=jac, det=det,
                     inverse_jacobian=inv)


def facet_geometry(mesh, f):
    return FacetGeometry(
        normal=mesh.facet_normals[f].copy(),
        tangent=mesh.facet_tangents[f].copy(),
        length=float(mesh.facet_lengths[f]),
        midpoint=mesh.facet_midpoints[f].copy(),
    )


def cell_area(mesh, c):
    return affine_map(mesh, c).det * mesh.ref_measure


def total_area(mesh):
    return sum(cell_area(mesh, c) for c in range(mesh.num_cells))


def build_structured_mesh(n, cell_kind=QUAD):
    """Uniform n-by-n partition of the unit square.

    For quads this gives n^2 square cells.  For triangles each square is
    split along the diagonal running from its lower-left to its upper-right
    corner, giving 2 n^2 congruent cells.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"subdivision count must be a positive integer, got {n!r}")
    if cell_kind not in (QUAD, TRIANGLE):
        raise ValueError(f"unknown cell kind: {cell_kind!r}")
    coords = np.arange(n + 1) / n
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
            if cell_kind == QUAD:
                cells.append((v00, v10, v11, v01))
            else:
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
    return Mesh(vertices, cells, cell_kind, structured_n=n)


def locate_cell(mesh, point):
    """Index of the cell containing a point of the unit square (structured meshes)."""
    if mesh.structured_n is None:
        raise ValueError("locate_cell requires a structured mesh")
    n = mesh.structured_n
    x, y = float(point[0]), float(point[1])
    if not (-1e-12 <= x <= 1 + 1e-12 and -1e-12 <= y <= 1 + 1e-12):
        raise ValueError(f"point {point} outside the unit square")
    i = min(max(int(x * n), 0), n - 1)
    j = min(max(int(y * n), 0), n - 1)
    if mesh.cell_kind == QUAD:
        return j * n + i
    xr, yr = x * n - i, y * n - j
    return 2 * (j * n + i) + (0 if yr <= xr else 1)


def write_mesh_text(mesh, stream):
    """Plain-text mesh dump: one record per line (vertices, cells, facets)."""
    stream.write(f"mesh kind={mesh.cell_kind} vertices={mesh.num_vertices} "
                 f"cells={mesh.num_cells} facets={mesh.num_facets}\n")
    for i, (x, y) in enumerate(mesh.vertices):
        stream.write(f"vertex {i} {x:.16e} {y:.16e}\n")
    for c, verts in enumerate(mesh.cells):
        stream.write(f"cell {c} " + " ".join(str(v) for v in verts) + "\n")
    for f in range(mesh.num_facets):
        v0, v1 = mesh.facet_vertices[f]
        own, nbr = mesh.facet_cells[f]
        nx, ny = mesh.facet_normals[f]
        stream.write(f"facet {f} {v0} {v1} owner {own} neighbor {nbr} "
                     f"normal {nx:.16e} {ny:.16e}\n")
