"""Structured meshes of the unit square/cube with facet connectivity.

Supports four cell kinds: TRI (each grid square split along the (i,j) ->
(i+1,j+1) diagonal), QUAD, TET (Kuhn 6-tet split of each grid cube), and
HEX.  Facets are enumerated once, ordered lexicographically by their sorted
vertex indices, and each carries a single stored unit normal pointing
outward from the lower-indexed ("plus") adjacent cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

BOUNDARY = -1


class CellKind(str, Enum):
    TRI = "tri"
    QUAD = "quad"
    TET = "tet"
    HEX = "hex"

    @property
    def dim(self) -> int:
        return 2 if self in (CellKind.TRI, CellKind.QUAD) else 3

    @property
    def n_facets_per_cell(self) -> int:
        return {CellKind.TRI: 3, CellKind.QUAD: 4, CellKind.TET: 4, CellKind.HEX: 6}[self]


# Local facet numbering per cell kind, as index tuples into the cell's vertex
# list.  This ordering is shared with the reference-element facet/basis
# ordering in dppflow.elements and must not change independently.
LOCAL_FACETS = {
    CellKind.TRI: ((0, 1), (0, 2), (1, 2)),
    CellKind.QUAD: ((0, 2), (1, 3), (0, 1), (2, 3)),
    CellKind.TET: ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)),
    CellKind.HEX: ((0, 2, 4, 6), (1, 3, 5, 7), (0, 1, 4, 5), (2, 3, 6, 7), (0, 1, 2, 3), (4, 5, 6, 7)),
}


@dataclass(frozen=True)
class FacetRecord:
    """One mesh facet (edge in 2D, face in 3D)."""

    vertices: tuple[int, ...]
    plus_cell: int
    minus_cell: int  # BOUNDARY for boundary facets
    normal: np.ndarray  # unit, outward from plus_cell
    measure: float
    center: np.ndarray

    @property
    def is_boundary(self) -> bool:
        return self.minus_cell == BOUNDARY


@dataclass(frozen=True)
class CellGeometry:
    """Affine map x = origin + J @ x_ref from the reference cell."""

    origin: np.ndarray
    jacobian: np.ndarray
    det: float
    volume: float


class Mesh:
    """Immutable structured mesh of the unit domain.

    Attributes vertices (V, dim), cells (C, k) and the facet arrays are
    plain numpy arrays; do not mutate them after construction.
    """

    def __init__(self, dim, cell_kind, n_div, vertices, cells):
        self.dim = dim
        self.cell_kind = cell_kind
        self.n_div = n_div
        self.h = 1.0 / n_div
        self.vertices = vertices
        self.cells = cells
        self._build_facets()
        self._jacobians = None

    # -- basic counts ------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    # -- construction ------------------------------------------------------

    def _build_facets(self):
        local = LOCAL_FACETS[self.cell_kind]
        seen: dict[tuple[int, ...], list[tuple[int, int]]] = {}
        for c, cell in enumerate(self.cells):
            for loc, idx in enumerate(local):
                key = tuple(sorted(int(cell[i]) for i in idx))
                seen.setdefault(key, []).append((c, loc))

        keys = sorted(seen)
        records = []
        n_loc = len(local)
        cell_facets = np.empty((self.n_cells, n_loc), dtype=np.int64)
        cell_signs = np.empty((self.n_cells, n_loc), dtype=np.int8)
        for fid, key in enumerate(keys):
            adj = seen[key]
            if len(adj) > 2:
                raise ValueError(f"facet {key} shared by more than two cells")
            adj.sort()
            plus_cell, plus_loc = adj[0]
            minus_cell, minus_loc = adj[1] if len(adj) == 2 else (BOUNDARY, None)
            normal, measure, center = self._facet_geometry(key, plus_cell)
            records.append(FacetRecord(key, plus_cell, minus_cell, normal, measure, center))
            cell_facets[plus_cell, plus_loc] = fid
            cell_signs[plus_cell, plus_loc] = 1
            if minus_cell != BOUNDARY:
                cell_facets[minus_cell, minus_loc] = fid
                cell_signs[minus_cell, minus_loc] = -1

        self.facets = records
        self.facet_vertex_ids = np.array(keys, dtype=np.int64)
        self.cell_facets = cell_facets
        self.cell_facet_signs = cell_signs
        self.facet_normals = np.array([f.normal for f in records])
        self.facet_measures = np.array([f.measure for f in records])
        self.facet_plus = np.array([f.plus_cell for f in records], dtype=np.int64)
        self.facet_minus = np.array([f.minus_cell for f in records], dtype=np.int64)
        self.interior_facets = np.flatnonzero(self.facet_minus != BOUNDARY)
        self.boundary_facets = np.flatnonzero(self.facet_minus == BOUNDARY)

    def _facet_geometry(self, key, plus_cell):
        pts = self.vertices[list(key)]
        center = pts.mean(axis=0)
        if self.dim == 2:
            t = pts[1] - pts[0]
            measure = float(np.linalg.norm(t))
            normal = np.array([t[1], -t[0]]) / measure
        elif len(key) == 3:
            cr = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            area2 = float(np.linalg.norm(cr))
            measure = 0.5 * area2
            normal = cr / area2
        else:
            # axis-aligned rectangle; sorted vertex ids put the two edge
            # neighbours of the low corner at positions 1 and 2
            a, b = pts[1] - pts[0], pts[2] - pts[0]
            cr = np.cross(a, b)
            measure = float(np.linalg.norm(cr))
            normal = cr / measure
        cell_center = self.vertices[self.cells[plus_cell]].mean(axis=0)
        if np.dot(normal, center - cell_center) < 0:
            normal = -normal
        return normal, measure, center

    # -- geometry ----------------------------------------------------------

    def jacobians(self):
        """Per-cell (J, det) arrays for the affine reference maps."""
        if self._jacobians is None:
            v = self.vertices
            if self.cell_kind in (CellKind.TRI, CellKind.TET):
                cols = [v[self.cells[:, k + 1]] - v[self.cells[:, 0]] for k in range(self.dim)]
                J = np.stack(cols, axis=-1)
            else:
                diag = v[self.cells[:, -1]] - v[self.cells[:, 0]]
                J = np.zeros((self.n_cells, self.dim, self.dim))
                for k in range(self.dim):
                    J[:, k, k] = diag[:, k]
            dets = np.linalg.det(J)
            self._jacobians = (J, dets)
        return self._jacobians

    def boundary_vertices(self) -> np.ndarray:
        ids = set()
        for f in self.boundary_facets:
            ids.update(self.facets[f].vertices)
        return np.array(sorted(ids), dtype=np.int64)

    def dump_text(self) -> str:
        """Plain-text dump for debugging: a vertices block then a cells block."""
        lines = ["vertices"]
        lines += [" ".join(f"{x:.17g}" for x in p) for p in self.vertices]
        lines.append("cells")
        lines += [" ".join(str(int(i)) for i in cell) for cell in self.cells]
        return "\n".join(lines) + "\n"


def reference_measure(cell_kind) -> float:
    return {CellKind.TRI: 0.5, CellKind.QUAD: 1.0, CellKind.TET: 1.0 / 6.0, CellKind.HEX: 1.0}[cell_kind]


def generate_unit_mesh(dim: int, cell_kind: CellKind, n_div: int) -> Mesh:
    """Structured mesh of the unit square (dim=2) or cube (dim=3).

    Vertex coordinates are i/n_div along each axis.  TRI splits every grid
    square into 2 triangles along one diagonal; TET splits every grid cube
    into 6 tetrahedra sharing the main diagonal.
    """
    cell_kind = CellKind(cell_kind)
    if n_div < 1:
        raise ValueError("n_div must be a positive integer")
    if cell_kind.dim != dim:
        raise ValueError(f"cell kind {cell_kind.value} is {cell_kind.dim}D, requested dim={dim}")

    n = n_div
    if dim == 2:
        xs = np.linspace(0.0, 1.0, n + 1)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        vertices = np.column_stack([X.ravel(order="F"), Y.ravel(order="F")])

        def vid(i, j):
            return j * (n + 1) + i

        cells = []
        for j in range(n):
            for i in range(n):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                if cell_kind is CellKind.QUAD:
                    cells.append((v00, v10, v01, v11))
                else:
                    cells.append((v00, v10, v11))
                    cells.append((v00, v11, v01))
    else:
        xs = np.linspace(0.0, 1.0, n + 1)
        grid = np.array(list(itertools.product(xs, repeat=3)))
        # product iterates last axis fastest; reorder so x is fastest
        vertices = grid[:, ::-1]

        def vid3(i, j, k):
            return (k * (n + 1) + j) * (n + 1) + i

        cells = []
        if cell_kind is CellKind.HEX:
            for k in range(n):
                for j in range(n):
                    for i in range(n):
                        cells.append(tuple(
                            vid3(i + di, j + dj, k + dk)
                            for dk in (0, 1) for dj in (0, 1) for di in (0, 1)
                        ))
        else:
            perms = list(itertools.permutations((0, 1, 2)))
            steps = np.eye(3, dtype=int)
            for k in range(n):
                for j in range(n):
                    for i in range(n):
                        base = np.array([i, j, k])
                        for perm in perms:
                            corners = [base.copy()]
                            for axis in perm:
                                corners.append(corners[-1] + steps[axis])
                            tet = [vid3(*c) for c in corners]
                            e = [np.asarray(corners[m + 1] - corners[0], dtype=float) for m in range(3)]
                            if np.linalg.det(np.column_stack(e)) < 0:
                                tet[1], tet[2] = tet[2], tet[1]
                            cells.append(tuple(tet))

    mesh = Mesh(dim, cell_kind, n_div, vertices, np.array(cells, dtype=np.int64))
    _, dets = mesh.jacobians()
    if np.any(dets <= 0):
        raise RuntimeError("mesh generation produced an inverted cell")
    return mesh


def facet_adjacency(mesh: Mesh) -> list[FacetRecord]:
    """All facets, each interior facet exactly once, in lexicographic order."""
    return mesh.facets


def cell_geometry(mesh: Mesh, cell_index: int) -> CellGeometry:
    if not 0 <= cell_index < mesh.n_cells:
        raise IndexError(f"cell index {cell_index} out of range")
    J, dets = mesh.jacobians()
    det = float(dets[cell_index])
    if det <= 0:
        raise RuntimeError(f"cell {cell_index} has non-positive Jacobian determinant")
    origin = mesh.vertices[mesh.cells[cell_index, 0]]
    return CellGeometry(origin, J[cell_index], det, det * reference_measure(mesh.cell_kind))
