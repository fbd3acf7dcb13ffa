"""Assembly of the four-field block systems for the three discretizations.

Each formulation produces ten stiffness blocks (per-network uu/up/pu/pp plus
the two cross-network pressure couplings) and four right-hand-side segments
in the global field ordering (u1, p1, u2, p2).

Boundary handling follows the weak forms: every formulation takes pressure
data through the boundary functional -(w.n, p0); the continuous nodal
discretization can additionally pin boundary pressure nodes by symmetric
row/column replacement (off by default -- it costs half an order of
velocity accuracy, see assemble_cgvms).  Prescribed normal velocities enter
the discontinuous form weakly and constrain flux DoFs strongly in the
facet-based spaces.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elements import (
    HDIV_FAMILY,
    SCALAR_FAMILY,
    Formulation,
    eval_basis,
    gauss_legendre_01,
    nodes_per_cell,
    quadrature_rule,
)
from .mesh import CellKind, Mesh
from .problem import BoundarySpec, DppParameters

FIELDS = ("u1", "p1", "u2", "p2")

FORM_QUAD_DEGREE = 2   # exact for every lowest-order bilinear form here
DATA_QUAD_DEGREE = 4   # boundary/data functionals with non-polynomial traces


@dataclass
class AssemblyStats:
    wall_time_s: float
    nnz: dict[str, int]


@dataclass
class BlockSystem:
    """Ten-block four-field system with RHS segments and index sets."""

    formulation: Formulation
    mesh: Mesh
    params: DppParameters
    k1_uu: sp.csr_matrix
    k1_up: sp.csr_matrix
    k1_pu: sp.csr_matrix
    k1_pp: sp.csr_matrix
    k2_uu: sp.csr_matrix
    k2_up: sp.csr_matrix
    k2_pu: sp.csr_matrix
    k2_pp: sp.csr_matrix
    k12_pp: sp.csr_matrix
    k21_pp: sp.csr_matrix
    f1_u: np.ndarray
    f1_p: np.ndarray
    f2_u: np.ndarray
    f2_p: np.ndarray
    stats: AssemblyStats | None = None

    @property
    def field_sizes(self) -> dict[str, int]:
        return {"u1": self.k1_uu.shape[0], "p1": self.k1_pp.shape[0],
                "u2": self.k2_uu.shape[0], "p2": self.k2_pp.shape[0]}

    @property
    def size(self) -> int:
        return sum(self.field_sizes.values())

    def index_sets(self) -> dict[str, np.ndarray]:
        sizes = self.field_sizes
        out, start = {}, 0
        for name in FIELDS:
            out[name] = np.arange(start, start + sizes[name])
            start += sizes[name]
        return out

    def block_table(self) -> dict[tuple[str, str], sp.csr_matrix]:
        return {("u1", "u1"): self.k1_uu, ("u1", "p1"): self.k1_up,
                ("p1", "u1"): self.k1_pu, ("p1", "p1"): self.k1_pp,
                ("p1", "p2"): self.k12_pp, ("p2", "p1"): self.k21_pp,
                ("u2", "u2"): self.k2_uu, ("u2", "p2"): self.k2_up,
                ("p2", "u2"): self.k2_pu, ("p2", "p2"): self.k2_pp}

    def rhs_segments(self) -> dict[str, np.ndarray]:
        return {"u1": self.f1_u, "p1": self.f1_p, "u2": self.f2_u, "p2": self.f2_p}

    def split_solution(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {name: x[idx] for name, idx in self.index_sets().items()}


def monolithic_view(block_system: BlockSystem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Single CSR matrix and RHS in the (u1, p1, u2, p2) global ordering."""
    table = block_system.block_table()
    grid = [[table.get((r, c)) for c in FIELDS] for r in FIELDS]
    K = sp.bmat(grid, format="csr")
    rhs = np.concatenate([block_system.rhs_segments()[name] for name in FIELDS])
    return K, rhs


def export_matrix_market(block_system: BlockSystem, path) -> None:
    """Write the monolithic matrix in MatrixMarket coordinate format."""
    from .linalg import write_matrix_market

    K, _ = monolithic_view(block_system)
    write_matrix_market(path, K)


# ---------------------------------------------------------------------------
# shared machinery


class _Coo:
    """COO accumulator; duplicate (row, col) insertions sum on conversion."""

    def __init__(self, n_rows, n_cols):
        self.shape = (n_rows, n_cols)
        self.rows, self.cols, self.vals = [], [], []

    def add(self, loc, rows, cols):
        # loc (N, a, b), rows (N, a), cols (N, b)
        r = np.broadcast_to(rows[:, :, None], loc.shape)
        c = np.broadcast_to(cols[:, None, :], loc.shape)
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.ascontiguousarray(loc).ravel())

    def to_csr(self) -> sp.csr_matrix:
        if not self.vals:
            return sp.csr_matrix(self.shape)
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        A = sp.csr_matrix((v, (r, c)), shape=self.shape)
        A.sum_duplicates()
        A.sort_indices()
        return A


def _chunks(n: int, workers: int):
    return [idx for idx in np.array_split(np.arange(n), max(1, workers)) if len(idx)]


def _cell_geometry_arrays(mesh: Mesh):
    J, det = mesh.jacobians()
    Jinv = np.linalg.inv(J)
    origin = mesh.vertices[mesh.cells[:, 0]]
    return J, det, Jinv, origin


def _facet_reference_rule(mesh: Mesh, degree: int):
    """Reference rule on the facet parameter domain plus its measure."""
    if mesh.dim == 2:
        t, w = gauss_legendre_01(int(np.ceil((degree + 1) / 2)))
        return t[:, None], w, 1.0
    if mesh.cell_kind is CellKind.TET:
        r = quadrature_rule(CellKind.TRI, degree)
        return r.points, r.weights, 0.5
    r = quadrature_rule(CellKind.QUAD, degree)
    return r.points, r.weights, 1.0


def _facet_quadrature(mesh: Mesh, facet_ids: np.ndarray, degree: int):
    """Physical quadrature points (F, nq, dim) and weights (F, nq)."""
    ref, wref, ref_measure = _facet_reference_rule(mesh, degree)
    verts = mesh.vertices[mesh.facet_vertex_ids[facet_ids]]
    v0 = verts[:, 0]
    edges = verts[:, 1:1 + ref.shape[1]] - v0[:, None, :]
    X = v0[:, None, :] + np.einsum("qk,fki->fqi", ref, edges)
    W = wref[None, :] * (mesh.facet_measures[facet_ids] / ref_measure)[:, None]
    return X, W


def _scalar_trace(mesh, Jinv, origin, cells, X):
    """Nodal basis of the given cells evaluated at physical points X."""
    Xh = np.einsum("fij,fqj->fqi", Jinv[cells], X - origin[cells][:, None, :])
    nq = X.shape[1]
    vals, _ = eval_basis(SCALAR_FAMILY[mesh.cell_kind], Xh.reshape(-1, mesh.dim))
    return vals.reshape(len(cells), nq, -1)


def _pressure_dirichlet_vertices(mesh: Mesh, bcs: BoundarySpec, network: int):
    ids = set()
    for f in mesh.boundary_facets:
        if not bcs.is_velocity_facet(network, int(f)):
            ids.update(mesh.facets[f].vertices)
    return np.array(sorted(ids), dtype=np.int64)


def _eliminate(table, rhs, sizes, field, idx, values):
    """Symmetric strong-constraint elimination of dofs `idx` of `field`.

    Known values move to the RHS, the rows and columns are zeroed, and the
    diagonal block gets unit diagonal entries so block-transpose relations
    survive.
    """
    if len(idx) == 0:
        return
    n = sizes[field]
    lift = np.zeros(n)
    lift[idx] = values
    mask = np.ones(n)
    mask[idx] = 0.0
    D_keep = sp.diags(mask)
    D_pin = sp.diags(1.0 - mask)
    for (r, c), B in list(table.items()):
        if B is None:
            continue
        if c == field:
            rhs[r] = rhs[r] - B @ lift
            B = B @ D_keep
        if r == field:
            B = D_keep @ B
        table[(r, c)] = B
    table[(field, field)] = table[(field, field)] + D_pin
    rhs[field][idx] = values


# ---------------------------------------------------------------------------
# flux-based (facet DoF) formulation


def assemble_hdiv(mesh: Mesh, params: DppParameters, bcs: BoundarySpec | None,
                  workers: int = 1) -> BlockSystem:
    """Facet-flux velocities with cellwise-constant pressures."""
    t0 = time.perf_counter()
    dim, C = mesh.dim, mesh.n_cells
    J, det, Jinv, origin = _cell_geometry_arrays(mesh)
    nu, npress = mesh.n_facets, C

    rule = quadrature_rule(mesh.cell_kind, FORM_QUAD_DEGREE)
    Vref, _ = eval_basis(HDIV_FAMILY[mesh.cell_kind], rule.points)
    w = rule.weights
    gamma_b = np.asarray(params.gamma_b, dtype=float)
    if gamma_b.shape != (dim,):
        raise ValueError("gamma_b dimension does not match the mesh")

    dm_u = mesh.cell_facets
    signs = mesh.cell_facet_signs.astype(float)
    dm_p = np.arange(C, dtype=np.int64)[:, None]

    blocks = {name: _Coo(*shape) for name, shape in {
        "uu1": (nu, nu), "uu2": (nu, nu), "up1": (nu, npress), "up2": (nu, npress),
        "pu1": (npress, nu), "pu2": (npress, nu), "pp1": (npress, npress),
        "pp2": (npress, npress), "pp12": (npress, npress), "pp21": (npress, npress),
    }.items()}
    f_u = {1: np.zeros(nu), 2: np.zeros(nu)}
    f_p = {1: np.zeros(npress), 2: np.zeros(npress)}

    for cells in _chunks(C, workers):
        Jc, detc, sc = J[cells], det[cells], signs[cells]
        Vphys = np.einsum("cij,qfj->cqfi", Jc, Vref) / detc[:, None, None, None]
        mass = np.einsum("q,cqfi,cqgi->cfg", w, Vphys, Vphys) * detc[:, None, None]
        mass = mass * sc[:, :, None] * sc[:, None, :]
        # integral of div(phi_f) over the cell is the facet flux: +-1
        int_div = sc  # (C, nf)
        vol = detc * w.sum()
        ones = np.ones((len(cells), 1, 1))
        for net, k in ((1, params.k1), (2, params.k2)):
            blocks[f"uu{net}"].add(params.mu / k * mass, dm_u[cells], dm_u[cells])
            blocks[f"up{net}"].add(-int_div[:, :, None], dm_u[cells], dm_p[cells])
            blocks[f"pu{net}"].add(int_div[:, None, :], dm_p[cells], dm_u[cells])
            blocks[f"pp{net}"].add(params.beta / params.mu * vol[:, None, None] * ones,
                                   dm_p[cells], dm_p[cells])
            if np.any(gamma_b):
                fu = np.einsum("q,cqfi,i->cf", w, Vphys, gamma_b) * detc[:, None] * sc
                np.add.at(f_u[net], dm_u[cells].ravel(), fu.ravel())
        cross = -params.beta / params.mu * vol[:, None, None] * ones
        blocks["pp12"].add(cross, dm_p[cells], dm_p[cells])
        blocks["pp21"].add(cross, dm_p[cells], dm_p[cells])

    table = {
        ("u1", "u1"): blocks["uu1"].to_csr(), ("u1", "p1"): blocks["up1"].to_csr(),
        ("p1", "u1"): blocks["pu1"].to_csr(), ("p1", "p1"): blocks["pp1"].to_csr(),
        ("u2", "u2"): blocks["uu2"].to_csr(), ("u2", "p2"): blocks["up2"].to_csr(),
        ("p2", "u2"): blocks["pu2"].to_csr(), ("p2", "p2"): blocks["pp2"].to_csr(),
        ("p1", "p2"): blocks["pp12"].to_csr(), ("p2", "p1"): blocks["pp21"].to_csr(),
    }
    rhs = {"u1": f_u[1], "p1": f_p[1], "u2": f_u[2], "p2": f_p[2]}

    if bcs is not None:
        for net in (1, 2):
            pres = np.array([f for f in mesh.boundary_facets
                             if not bcs.is_velocity_facet(net, int(f))], dtype=np.int64)
            if len(pres):
                X, W = _facet_quadrature(mesh, pres, DATA_QUAD_DEGREE)
                p0 = bcs.p_data[net - 1](X.reshape(-1, dim)).reshape(W.shape)
                # constant unit-flux trace phi_f . n = 1/|f| on the facet
                contrib = -np.einsum("fq,fq->f", W, p0) / mesh.facet_measures[pres]
                np.add.at(rhs[f"u{net}"], pres, contrib)
            vel = np.array(sorted(bcs.velocity_facets[net - 1]), dtype=np.int64)
            if len(vel):
                X, W = _facet_quadrature(mesh, vel, DATA_QUAD_DEGREE)
                g = np.empty(len(vel))
                for i, f in enumerate(vel):
                    un = bcs.un_data[net - 1](X[i], mesh.facet_normals[f])
                    g[i] = W[i] @ un
                sizes = {"u1": nu, "p1": npress, "u2": nu, "p2": npress}
                _eliminate(table, rhs, sizes, f"u{net}", vel, g)

    return _finish(Formulation.HDIV, mesh, params, table, rhs, t0)


# ---------------------------------------------------------------------------
# stabilized nodal formulations (continuous and discontinuous)


def _vms_cell_blocks(mesh, params, cells, J, det, Jinv):
    """Cell integrals shared by the stabilized formulations.

    Returns per-network dicts of local arrays keyed uu/up/pu/pp plus the
    pressure mass matrix used for the cross couplings.
    """
    dim = mesh.dim
    rule = quadrature_rule(mesh.cell_kind, FORM_QUAD_DEGREE)
    N, Gref = eval_basis(SCALAR_FAMILY[mesh.cell_kind], rule.points)
    w = rule.weights
    nn = N.shape[1]
    detc = det[cells]
    Gp = np.einsum("qaj,cji->cqai", Gref, Jinv[cells])

    mass = detc[:, None, None] * np.einsum("q,qa,qb->ab", w, N, N)[None]
    gg = detc[:, None, None] * np.einsum("q,cqai,cqbi->cab", w, Gp, Gp)
    gn = detc[:, None, None, None] * np.einsum("q,cqai,qb->cabi", w, Gp, N)

    eye = np.eye(dim)
    nets = {}
    for net, k in ((1, params.k1), (2, params.k2)):
        kuu = 0.5 * params.mu / k * np.einsum("cab,ij->caibj", mass, eye)
        kup = -(gn + 0.5 * gn.transpose(0, 2, 1, 3)).transpose(0, 1, 3, 2)
        kpu = gn.transpose(0, 2, 1, 3) + 0.5 * gn
        kpp = 0.5 * k / params.mu * gg + params.beta / params.mu * mass
        nets[net] = {
            "uu": kuu.reshape(len(cells), nn * dim, nn * dim),
            "up": kup.reshape(len(cells), nn * dim, nn),
            "pu": kpu.reshape(len(cells), nn, nn * dim),
            "pp": kpp,
        }
    return nets, mass, N, Gp, w, detc


def _vms_cell_rhs(params, k, N, Gp, w, detc, gamma_b):
    """(f_u, f_p) cell contributions of the body force."""
    intN = np.einsum("q,qa->a", w, N)
    fu = 0.5 * detc[:, None, None] * intN[None, :, None] * gamma_b[None, None, :]
    fp = 0.5 * k / params.mu * detc[:, None] * np.einsum("q,cqai,i->ca", w, Gp, gamma_b)
    return fu, fp


def assemble_cgvms(mesh: Mesh, params: DppParameters, bcs: BoundarySpec | None,
                   workers: int = 1, pressure_dirichlet: str = "weak") -> BlockSystem:
    """Continuous equal-order nodal formulation with residual stabilization.

    Pressure data enters through the boundary functional -(w.n, p0) by
    default; pressure_dirichlet="strong" additionally pins boundary pressure
    nodes by symmetric row/column replacement.  The weak route converges at
    the optimal rate on every field, the strong route costs half an order on
    the velocities (measured in the test suite), so weak is the default.
    """
    t0 = time.perf_counter()
    dim, C, V = mesh.dim, mesh.n_cells, mesh.n_vertices
    J, det, Jinv, origin = _cell_geometry_arrays(mesh)
    nu, npress = V * dim, V
    gamma_b = np.asarray(params.gamma_b, dtype=float)
    if gamma_b.shape != (dim,):
        raise ValueError("gamma_b dimension does not match the mesh")

    dm_p = mesh.cells
    dm_u = (mesh.cells[:, :, None] * dim + np.arange(dim)).reshape(C, -1)

    blocks = {name: _Coo(*shape) for name, shape in {
        "uu1": (nu, nu), "uu2": (nu, nu), "up1": (nu, npress), "up2": (nu, npress),
        "pu1": (npress, nu), "pu2": (npress, nu), "pp1": (npress, npress),
        "pp2": (npress, npress), "pp12": (npress, npress), "pp21": (npress, npress),
    }.items()}
    f_u = {1: np.zeros(nu), 2: np.zeros(nu)}
    f_p = {1: np.zeros(npress), 2: np.zeros(npress)}

    for cells in _chunks(C, workers):
        nets, mass, N, Gp, w, detc = _vms_cell_blocks(mesh, params, cells, J, det, Jinv)
        for net, k in ((1, params.k1), (2, params.k2)):
            loc = nets[net]
            blocks[f"uu{net}"].add(loc["uu"], dm_u[cells], dm_u[cells])
            blocks[f"up{net}"].add(loc["up"], dm_u[cells], dm_p[cells])
            blocks[f"pu{net}"].add(loc["pu"], dm_p[cells], dm_u[cells])
            blocks[f"pp{net}"].add(loc["pp"], dm_p[cells], dm_p[cells])
            if np.any(gamma_b):
                fu, fp = _vms_cell_rhs(params, k, N, Gp, w, detc, gamma_b)
                np.add.at(f_u[net], dm_u[cells].ravel(), fu.ravel())
                np.add.at(f_p[net], dm_p[cells].ravel(), fp.ravel())
        cross = -params.beta / params.mu * mass
        blocks["pp12"].add(cross, dm_p[cells], dm_p[cells])
        blocks["pp21"].add(cross, dm_p[cells], dm_p[cells])

    table = _vms_table(blocks)
    rhs = {"u1": f_u[1], "p1": f_p[1], "u2": f_u[2], "p2": f_p[2]}

    if bcs is not None:
        _nodal_pressure_boundary_rhs(mesh, bcs, Jinv, origin, dm_u, rhs, dim)
        if pressure_dirichlet == "strong":
            sizes = {"u1": nu, "p1": npress, "u2": nu, "p2": npress}
            for net in (1, 2):
                verts = _pressure_dirichlet_vertices(mesh, bcs, net)
                vals = bcs.p_data[net - 1](mesh.vertices[verts])
                _eliminate(table, rhs, sizes, f"p{net}", verts, vals)
        elif pressure_dirichlet != "weak":
            raise ValueError("pressure_dirichlet must be 'weak' or 'strong'")

    return _finish(Formulation.CG_VMS, mesh, params, table, rhs, t0)


def _nodal_pressure_boundary_rhs(mesh, bcs, Jinv, origin, dm_u, rhs, dim):
    """Pressure-data boundary functional -(w.n, p0) for nodal velocities."""
    for net in (1, 2):
        pres = np.array([f for f in mesh.boundary_facets
                         if not bcs.is_velocity_facet(net, int(f))], dtype=np.int64)
        if not len(pres):
            continue
        X, W = _facet_quadrature(mesh, pres, DATA_QUAD_DEGREE)
        cells = mesh.facet_plus[pres]
        N = _scalar_trace(mesh, Jinv, origin, cells, X)
        p0 = bcs.p_data[net - 1](X.reshape(-1, dim)).reshape(W.shape)
        nrm = mesh.facet_normals[pres]
        contrib = -np.einsum("fq,fq,fqa,fi->fai", W, p0, N, nrm)
        np.add.at(rhs[f"u{net}"], dm_u[cells].ravel(),
                  contrib.reshape(len(pres), -1).ravel())


def _vms_table(blocks):
    return {
        ("u1", "u1"): blocks["uu1"].to_csr(), ("u1", "p1"): blocks["up1"].to_csr(),
        ("p1", "u1"): blocks["pu1"].to_csr(), ("p1", "p1"): blocks["pp1"].to_csr(),
        ("u2", "u2"): blocks["uu2"].to_csr(), ("u2", "p2"): blocks["up2"].to_csr(),
        ("p2", "u2"): blocks["pu2"].to_csr(), ("p2", "p2"): blocks["pp2"].to_csr(),
        ("p1", "p2"): blocks["pp12"].to_csr(), ("p2", "p1"): blocks["pp21"].to_csr(),
    }


def assemble_dgvms(mesh: Mesh, params: DppParameters, bcs: BoundarySpec | None,
                   workers: int = 1) -> BlockSystem:
    """Discontinuous stabilized formulation with interior-facet couplings."""
    t0 = time.perf_counter()
    dim, C = mesh.dim, mesh.n_cells
    nn = nodes_per_cell(mesh.cell_kind)
    J, det, Jinv, origin = _cell_geometry_arrays(mesh)
    npress = C * nn
    nu = npress * dim
    h = mesh.h
    gamma_b = np.asarray(params.gamma_b, dtype=float)
    if gamma_b.shape != (dim,):
        raise ValueError("gamma_b dimension does not match the mesh")

    cell_ids = np.arange(C, dtype=np.int64)
    dm_p = cell_ids[:, None] * nn + np.arange(nn)
    dm_u = (dm_p[:, :, None] * dim + np.arange(dim)).reshape(C, -1)

    blocks = {name: _Coo(*shape) for name, shape in {
        "uu1": (nu, nu), "uu2": (nu, nu), "up1": (nu, npress), "up2": (nu, npress),
        "pu1": (npress, nu), "pu2": (npress, nu), "pp1": (npress, npress),
        "pp2": (npress, npress), "pp12": (npress, npress), "pp21": (npress, npress),
    }.items()}
    f_u = {1: np.zeros(nu), 2: np.zeros(nu)}
    f_p = {1: np.zeros(npress), 2: np.zeros(npress)}

    for cells in _chunks(C, workers):
        nets, mass, N, Gp, w, detc = _vms_cell_blocks(mesh, params, cells, J, det, Jinv)
        for net, k in ((1, params.k1), (2, params.k2)):
            loc = nets[net]
            blocks[f"uu{net}"].add(loc["uu"], dm_u[cells], dm_u[cells])
            blocks[f"up{net}"].add(loc["up"], dm_u[cells], dm_p[cells])
            blocks[f"pu{net}"].add(loc["pu"], dm_p[cells], dm_u[cells])
            blocks[f"pp{net}"].add(loc["pp"], dm_p[cells], dm_p[cells])
            if np.any(gamma_b):
                fu, fp = _vms_cell_rhs(params, k, N, Gp, w, detc, gamma_b)
                np.add.at(f_u[net], dm_u[cells].ravel(), fu.ravel())
                np.add.at(f_p[net], dm_p[cells].ravel(), fp.ravel())
        cross = -params.beta / params.mu * mass
        blocks["pp12"].add(cross, dm_p[cells], dm_p[cells])
        blocks["pp21"].add(cross, dm_p[cells], dm_p[cells])

    # interior facet couplings: consistency fluxes and jump penalties
    interior = mesh.interior_facets
    for facets in _chunks(len(interior), workers):
        ids = interior[facets]
        if not len(ids):
            continue
        X, W = _facet_quadrature(mesh, ids, FORM_QUAD_DEGREE)
        nrm = mesh.facet_normals[ids]
        sides = {
            +1: (mesh.facet_plus[ids], _scalar_trace(mesh, Jinv, origin, mesh.facet_plus[ids], X)),
            -1: (mesh.facet_minus[ids], _scalar_trace(mesh, Jinv, origin, mesh.facet_minus[ids], X)),
        }
        for sig_s, (cs, Ns) in sides.items():
            for sig_t, (ct, Nt) in sides.items():
                F = np.einsum("fq,fqa,fqb->fab", W, Ns, Nt)
                Fn_s = np.einsum("fab,fi->faib", F, nrm).reshape(len(ids), nn * dim, nn)
                Fn_t = np.einsum("fab,fj->fabj", F, nrm).reshape(len(ids), nn, nn * dim)
                Fnn = np.einsum("fab,fi,fj->faibj", F, nrm, nrm).reshape(len(ids), nn * dim, nn * dim)
                for net, k in ((1, params.k1), (2, params.k2)):
                    blocks[f"up{net}"].add(0.5 * sig_s * Fn_s, dm_u[cs], dm_p[ct])
                    blocks[f"pu{net}"].add(-0.5 * sig_t * Fn_t, dm_p[cs], dm_u[ct])
                    blocks[f"uu{net}"].add(
                        params.eta_u * h * params.mu / k * sig_s * sig_t * Fnn,
                        dm_u[cs], dm_u[ct])
                    blocks[f"pp{net}"].add(
                        params.eta_p / h * k / params.mu * sig_s * sig_t * F,
                        dm_p[cs], dm_p[ct])

    if bcs is not None:
        for net in (1, 2):
            vel = np.array(sorted(bcs.velocity_facets[net - 1]), dtype=np.int64)
            if len(vel):
                Xv, Wv = _facet_quadrature(mesh, vel, FORM_QUAD_DEGREE)
                cv = mesh.facet_plus[vel]
                Nv = _scalar_trace(mesh, Jinv, origin, cv, Xv)
                nrmv = mesh.facet_normals[vel]
                F = np.einsum("fq,fqa,fqb->fab", Wv, Nv, Nv)
                Fn_s = np.einsum("fab,fi->faib", F, nrmv).reshape(len(vel), nn * dim, nn)
                Fn_t = np.einsum("fab,fj->fabj", F, nrmv).reshape(len(vel), nn, nn * dim)
                blocks[f"up{net}"].add(Fn_s, dm_u[cv], dm_p[cv])
                blocks[f"pu{net}"].add(-Fn_t, dm_p[cv], dm_u[cv])
                Xd, Wd = _facet_quadrature(mesh, vel, DATA_QUAD_DEGREE)
                Nd = _scalar_trace(mesh, Jinv, origin, cv, Xd)
                un = np.stack([bcs.un_data[net - 1](Xd[i], nrmv[i]) for i in range(len(vel))])
                fp = -np.einsum("fq,fq,fqa->fa", Wd, un, Nd)
                np.add.at(f_p[net], dm_p[cv].ravel(), fp.ravel())

    table = _vms_table(blocks)
    rhs = {"u1": f_u[1], "p1": f_p[1], "u2": f_u[2], "p2": f_p[2]}

    if bcs is not None:
        # pressure data enters weakly through the velocity test functions
        for net in (1, 2):
            pres = np.array([f for f in mesh.boundary_facets
                             if not bcs.is_velocity_facet(net, int(f))], dtype=np.int64)
            if not len(pres):
                continue
            X, W = _facet_quadrature(mesh, pres, DATA_QUAD_DEGREE)
            cells = mesh.facet_plus[pres]
            N = _scalar_trace(mesh, Jinv, origin, cells, X)
            p0 = bcs.p_data[net - 1](X.reshape(-1, dim)).reshape(W.shape)
            nrm = mesh.facet_normals[pres]
            contrib = -np.einsum("fq,fq,fqa,fi->fai", W, p0, N, nrm)
            np.add.at(rhs[f"u{net}"], dm_u[cells].ravel(),
                      contrib.reshape(len(pres), -1).ravel())

    return _finish(Formulation.DG_VMS, mesh, params, table, rhs, t0)


_ASSEMBLERS = {Formulation.HDIV: assemble_hdiv, Formulation.CG_VMS: assemble_cgvms,
               Formulation.DG_VMS: assemble_dgvms}


def assemble(mesh: Mesh, formulation: Formulation, params: DppParameters,
             bcs: BoundarySpec | None, workers: int = 1) -> BlockSystem:
    return _ASSEMBLERS[Formulation(formulation)](mesh, params, bcs, workers=workers)


def _finish(formulation, mesh, params, table, rhs, t0) -> BlockSystem:
    names = {("u1", "u1"): "k1_uu", ("u1", "p1"): "k1_up", ("p1", "u1"): "k1_pu",
             ("p1", "p1"): "k1_pp", ("u2", "u2"): "k2_uu", ("u2", "p2"): "k2_up",
             ("p2", "u2"): "k2_pu", ("p2", "p2"): "k2_pp", ("p1", "p2"): "k12_pp",
             ("p2", "p1"): "k21_pp"}
    kwargs = {}
    nnz = {}
    for key, attr in names.items():
        B = table[key].tocsr()
        B.sort_indices()
        kwargs[attr] = B
        nnz[attr] = B.nnz
    stats = AssemblyStats(wall_time_s=time.perf_counter() - t0, nnz=nnz)
    return BlockSystem(formulation=Formulation(formulation), mesh=mesh, params=params,
                       f1_u=rhs["u1"], f1_p=rhs["p1"], f2_u=rhs["u2"], f2_p=rhs["p2"],
                       stats=stats, **kwargs)


# ---------------------------------------------------------------------------
# field evaluation (for error norms and post-processing)


@dataclass
class DiscreteField:
    """One solution field with per-cell evaluation support."""

    mesh: Mesh
    formulation: Formulation
    name: str  # u1 | p1 | u2 | p2
    coeffs: np.ndarray

    @property
    def is_velocity(self) -> bool:
        return self.name.startswith("u")

    def evaluate_all(self, ref_points) -> np.ndarray:
        """Values on every cell at the given reference points.

        Returns (C, nq) for pressures and (C, nq, dim) for velocities.
        """
        mesh = self.mesh
        pts = np.atleast_2d(ref_points)
        dim = mesh.dim
        if self.formulation is Formulation.HDIV:
            if self.is_velocity:
                Vref, _ = eval_basis(HDIV_FAMILY[mesh.cell_kind], pts)
                J, det = mesh.jacobians()
                wloc = mesh.cell_facet_signs * self.coeffs[mesh.cell_facets]
                vals = np.einsum("cij,qfj,cf->cqi", J, Vref, wloc)
                return vals / det[:, None, None]
            return np.broadcast_to(self.coeffs[:, None], (mesh.n_cells, len(pts))).copy()

        N, _ = eval_basis(SCALAR_FAMILY[mesh.cell_kind], pts)
        nn = N.shape[1]
        if self.formulation is Formulation.CG_VMS:
            if self.is_velocity:
                cf = self.coeffs.reshape(-1, dim)[mesh.cells]
            else:
                cf = self.coeffs[mesh.cells]
        else:
            if self.is_velocity:
                cf = self.coeffs.reshape(mesh.n_cells, nn, dim)
            else:
                cf = self.coeffs.reshape(mesh.n_cells, nn)
        if self.is_velocity:
            return np.einsum("qa,cai->cqi", N, cf)
        return np.einsum("qa,ca->cq", N, cf)

    def evaluate(self, cell: int, ref_points) -> np.ndarray:
        return self.evaluate_all(ref_points)[cell]


def solution_fields(block_system: BlockSystem, x: np.ndarray) -> dict[str, DiscreteField]:
    parts = block_system.split_solution(x)
    return {name: DiscreteField(block_system.mesh, block_system.formulation, name, parts[name])
            for name in FIELDS}
