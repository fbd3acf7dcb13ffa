"""Reference finite elements, quadrature rules and Piola push-forwards.

Lowest-order spaces only: P1/Q1 nodal scalars, cellwise constants, and the
facet-flux H(div) families on all four cell kinds.  The H(div) degree of
freedom attached to facet f is the total normal flux through f, so the
basis satisfies integral(phi_i . n_j) over facet j == delta_ij on the
reference cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mesh import CellGeometry, CellKind, Mesh

_REF_TOL = 1e-12


class ElementFamily(str, Enum):
    P1 = "p1"
    Q1 = "q1"
    DP0_DQ0 = "dp0_dq0"
    RT_TRI = "rt_tri"
    RT_QUAD = "rt_quad"
    RT_TET = "rt_tet"
    RT_HEX = "rt_hex"


class Formulation(str, Enum):
    HDIV = "hdiv"
    CG_VMS = "cgvms"
    DG_VMS = "dgvms"


SCALAR_FAMILY = {CellKind.TRI: ElementFamily.P1, CellKind.QUAD: ElementFamily.Q1,
                 CellKind.TET: ElementFamily.P1, CellKind.HEX: ElementFamily.Q1}
HDIV_FAMILY = {CellKind.TRI: ElementFamily.RT_TRI, CellKind.QUAD: ElementFamily.RT_QUAD,
               CellKind.TET: ElementFamily.RT_TET, CellKind.HEX: ElementFamily.RT_HEX}

# opposite vertex of each local facet for the simplex flux bases,
# matching mesh.LOCAL_FACETS ordering
_TRI_OPPOSITE = [(0.0, 1.0), (1.0, 0.0), (0.0, 0.0)]
_TET_OPPOSITE = [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 0.0)]


def family_dim(family: ElementFamily) -> int:
    return {ElementFamily.P1: None, ElementFamily.Q1: None, ElementFamily.DP0_DQ0: None,
            ElementFamily.RT_TRI: 2, ElementFamily.RT_QUAD: 2,
            ElementFamily.RT_TET: 3, ElementFamily.RT_HEX: 3}[family]


def is_vector_family(family: ElementFamily) -> bool:
    return family in (ElementFamily.RT_TRI, ElementFamily.RT_QUAD,
                      ElementFamily.RT_TET, ElementFamily.RT_HEX)


@dataclass(frozen=True)
class QuadratureRule:
    cell_kind: CellKind
    degree: int
    points: np.ndarray  # (n, dim) reference coordinates
    weights: np.ndarray  # sum to the reference-cell measure


def _check_inside(cell_kind: CellKind, pts: np.ndarray):
    x = pts
    if cell_kind in (CellKind.QUAD, CellKind.HEX):
        ok = np.all(x >= -_REF_TOL) and np.all(x <= 1 + _REF_TOL)
    else:
        ok = np.all(x >= -_REF_TOL) and np.all(x.sum(axis=-1) <= 1 + _REF_TOL)
    if not ok:
        raise ValueError("reference point outside reference cell")


def eval_basis(family: ElementFamily, points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate reference basis functions at reference points.

    Scalar families return (values (n, nd), gradients (n, nd, dim)); vector
    families return (values (n, nd, dim), divergences (nd,)).  Divergences
    are constant over the cell for every supported family.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if family is ElementFamily.P1:
        dim = pts.shape[1]
        kind = CellKind.TRI if dim == 2 else CellKind.TET
        _check_inside(kind, pts)
        vals = np.empty((n, dim + 1))
        vals[:, 0] = 1.0 - pts.sum(axis=1)
        vals[:, 1:] = pts
        grads = np.empty((n, dim + 1, dim))
        grads[:, 0, :] = -1.0
        grads[:, 1:, :] = np.eye(dim)
        return vals, grads
    if family is ElementFamily.Q1:
        dim = pts.shape[1]
        _check_inside(CellKind.QUAD if dim == 2 else CellKind.HEX, pts)
        nd = 2 ** dim
        vals = np.ones((n, nd))
        grads = np.ones((n, nd, dim))
        for a in range(nd):
            for axis in range(dim):
                s = (a >> axis) & 1
                f = pts[:, axis] if s else 1.0 - pts[:, axis]
                df = 1.0 if s else -1.0
                vals[:, a] *= f
                for other in range(dim):
                    grads[:, a, other] *= df if other == axis else f
        return vals, grads
    if family is ElementFamily.DP0_DQ0:
        return np.ones((n, 1)), np.zeros((n, 1, pts.shape[1]))

    dim = family_dim(family)
    if pts.shape[1] != dim:
        raise ValueError("point dimension does not match element family")
    if family is ElementFamily.RT_TRI:
        _check_inside(CellKind.TRI, pts)
        opp = np.array(_TRI_OPPOSITE)
        vals = pts[:, None, :] - opp[None, :, :]
        return vals, np.full(3, 2.0)
    if family is ElementFamily.RT_TET:
        _check_inside(CellKind.TET, pts)
        opp = np.array(_TET_OPPOSITE)
        vals = 2.0 * (pts[:, None, :] - opp[None, :, :])
        return vals, np.full(4, 6.0)
    # tensor-product H(div) on the unit square/cube: one DoF per facet,
    # facet order (x-,x+,y-,y+[,z-,z+]) matching mesh.LOCAL_FACETS
    _check_inside(CellKind.QUAD if dim == 2 else CellKind.HEX, pts)
    nd = 2 * dim
    vals = np.zeros((n, nd, dim))
    for axis in range(dim):
        vals[:, 2 * axis, axis] = pts[:, axis] - 1.0
        vals[:, 2 * axis + 1, axis] = pts[:, axis]
    return vals, np.ones(nd)


def piola_map(geometry: CellGeometry, reference_vector_values: np.ndarray) -> np.ndarray:
    """Contravariant Piola transform v = (J @ v_ref) / det J.

    Preserves facet normal fluxes, so facet-flux DoFs stay single-valued
    across cells.
    """
    if geometry.det <= 0:
        raise ValueError("singular or inverted cell geometry")
    return np.einsum("ij,...j->...i", geometry.jacobian, reference_vector_values) / geometry.det


def piola_divergence(geometry: CellGeometry, reference_divergences: np.ndarray) -> np.ndarray:
    if geometry.det <= 0:
        raise ValueError("singular or inverted cell geometry")
    return np.asarray(reference_divergences) / geometry.det


def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _tensor_rule(dim: int, n: int):
    x, w = gauss_legendre_01(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    wts = np.ones(len(pts))
    for g in wgrids:
        wts *= g.ravel()
    return pts, wts


def quadrature_rule(cell_kind: CellKind, degree: int) -> QuadratureRule:
    """Rule integrating polynomials of total degree <= degree exactly."""
    cell_kind = CellKind(cell_kind)
    if degree < 0 or degree > 6:
        raise ValueError(f"unsupported quadrature degree {degree} (0..6)")
    degree = max(degree, 1)

    if cell_kind in (CellKind.QUAD, CellKind.HEX):
        n = math.ceil((degree + 1) / 2)
        pts, wts = _tensor_rule(cell_kind.dim, n)
    elif cell_kind is CellKind.TRI:
        if degree == 1:
            pts = np.array([[1 / 3, 1 / 3]])
            wts = np.array([0.5])
        elif degree == 2:
            pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
            wts = np.full(3, 1 / 6)
        else:
            # collapsed (Duffy) tensor rule: x=u, y=v(1-u), jacobian (1-u)
            n = math.ceil((degree + 2) / 2)
            u, wu = gauss_legendre_01(n)
            v, wv = gauss_legendre_01(n)
            U, V = np.meshgrid(u, v, indexing="ij")
            WU, WV = np.meshgrid(wu, wv, indexing="ij")
            pts = np.column_stack([U.ravel(), (V * (1 - U)).ravel()])
            wts = (WU * WV * (1 - U)).ravel()
    else:
        if degree == 1:
            pts = np.array([[0.25, 0.25, 0.25]])
            wts = np.array([1 / 6])
        elif degree == 2:
            a = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
            b = (5.0 - math.sqrt(5.0)) / 20.0
            pts = np.array([[a, b, b], [b, a, b], [b, b, a], [b, b, b]])
            wts = np.full(4, 1 / 24)
        else:
            # x=u, y=v(1-u), z=w(1-u)(1-v), jacobian (1-u)^2 (1-v)
            n = math.ceil((degree + 3) / 2)
            u, wu = gauss_legendre_01(n)
            grids = np.meshgrid(u, u, u, indexing="ij")
            wgrids = np.meshgrid(wu, wu, wu, indexing="ij")
            U, V, W = (g.ravel() for g in grids)
            WU, WV, WW = (g.ravel() for g in wgrids)
            pts = np.column_stack([U, V * (1 - U), W * (1 - U) * (1 - V)])
            wts = WU * WV * WW * (1 - U) ** 2 * (1 - V)

    return QuadratureRule(cell_kind, degree, pts, wts)


def nodes_per_cell(cell_kind: CellKind) -> int:
    return {CellKind.TRI: 3, CellKind.QUAD: 4, CellKind.TET: 4, CellKind.HEX: 8}[cell_kind]


def dof_count(formulation: Formulation, mesh: Mesh) -> int:
    """Total system size (both networks, velocities and pressures)."""
    formulation = Formulation(formulation)
    if formulation is Formulation.HDIV:
        return 2 * (mesh.n_facets + mesh.n_cells)
    per_node = 2 * mesh.dim + 2
    if formulation is Formulation.CG_VMS:
        return per_node * mesh.n_vertices
    return per_node * nodes_per_cell(mesh.cell_kind) * mesh.n_cells
