"""Composable nested 2x2 block preconditioners over the four-field system.

Both solver methods run restarted GMRES on the same monolithic matrix; the
preconditioners differ only in which sub-blocks they extract:

* scale split -- groups (u1,p1) / (u2,p2) additively, applies a full Schur
  factorization inside each network (one ILU(0) sweep for the velocity
  block, one multigrid V-cycle on S_p = K_pp - K_pu diag(K_uu)^-1 K_up),
  and leaves the cross-network pressure couplings to the outer Krylov loop.
* field split -- a full Schur factorization over the velocity group
  (u1,u2) / pressure group (p1,p2), ILU(0) on the combined velocity block
  and one V-cycle per diagonal pressure block of S_p, with the off-diagonal
  pressure couplings again left to the outer loop.

Configurations are expressed in PETSc-style option tokens (see
SCALE_SPLIT_OPTIONS / FIELD_SPLIT_OPTIONS) and parsed into a validated
tree; "preonly" means exactly one application of the inner preconditioner
per outer iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .assembly import FIELDS, BlockSystem, monolithic_view
from .linalg import (
    KrylovStats,
    amg_setup,
    amg_vcycle,
    apply_ilu0,
    diag_lump,
    gmres,
    ilu0,
    schur_selfp,
)

ALL_FIELDS = (0, 1, 2, 3)  # u1, p1, u2, p2

SCALE_SPLIT_OPTIONS = """
-ksp_type gmres
-pc_type fieldsplit
-pc_fieldsplit_0_fields 0,1
-pc_fieldsplit_1_fields 2,3
-pc_fieldsplit_type additive
-fieldsplit_0_ksp_type preonly
-fieldsplit_0_pc_type fieldsplit
-fieldsplit_0_pc_fieldsplit_type schur
-fieldsplit_0_pc_fieldsplit_schur_fact_type full
-fieldsplit_0_pc_fieldsplit_schur_precondition selfp
-fieldsplit_0_fieldsplit_0_ksp_type preonly
-fieldsplit_0_fieldsplit_0_pc_type bjacobi
-fieldsplit_0_fieldsplit_1_ksp_type preonly
-fieldsplit_0_fieldsplit_1_pc_type hypre
-fieldsplit_1_ksp_type preonly
-fieldsplit_1_pc_type fieldsplit
-fieldsplit_1_pc_fieldsplit_type schur
-fieldsplit_1_pc_fieldsplit_schur_fact_type full
-fieldsplit_1_pc_fieldsplit_schur_precondition selfp
-fieldsplit_1_fieldsplit_0_ksp_type preonly
-fieldsplit_1_fieldsplit_0_pc_type bjacobi
-fieldsplit_1_fieldsplit_1_ksp_type preonly
-fieldsplit_1_fieldsplit_1_pc_type hypre
""".split()

FIELD_SPLIT_OPTIONS = """
-ksp_type gmres
-pc_type fieldsplit
-pc_fieldsplit_0_fields 0,2
-pc_fieldsplit_1_fields 1,3
-pc_fieldsplit_type schur
-pc_fieldsplit_schur_fact_type full
-pc_fieldsplit_schur_precondition selfp
-fieldsplit_0_ksp_type preonly
-fieldsplit_0_pc_type bjacobi
-fieldsplit_1_ksp_type preonly
-fieldsplit_1_pc_type fieldsplit
-fieldsplit_1_pc_fieldsplit_type additive
-fieldsplit_1_fieldsplit_0_ksp_type preonly
-fieldsplit_1_fieldsplit_0_pc_type hypre
-fieldsplit_1_fieldsplit_1_ksp_type preonly
-fieldsplit_1_fieldsplit_1_pc_type hypre
""".split()


class OptionError(ValueError):
    pass


@dataclass(frozen=True)
class InnerSolver:
    """Leaf or nested preconditioner block: preonly + {bjacobi, amg, fieldsplit}."""

    pc_type: str
    split: "SplitNode | None" = None


@dataclass(frozen=True)
class SplitNode:
    groups: tuple[tuple[int, ...], tuple[int, ...]]  # global field ids
    split_type: str  # "additive" | "schur"
    children: tuple[InnerSolver, InnerSolver]
    schur_fact_type: str | None = None
    schur_precondition: str | None = None


@dataclass(frozen=True)
class SolverConfig:
    split: SplitNode
    ksp_type: str = "gmres"
    rtol: float = 1e-7
    restart: int = 30
    max_iter: int = 1000


def _tokens_to_pairs(tokens) -> dict[str, str]:
    if isinstance(tokens, str):
        tokens = tokens.split()
    flat: list[str] = []
    for tok in tokens:
        flat.extend(str(tok).split())
    pairs = {}
    i = 0
    while i < len(flat):
        key = flat[i]
        if not key.startswith("-"):
            raise OptionError(f"expected an option starting with '-', got {key!r}")
        if i + 1 >= len(flat) or flat[i + 1].startswith("-"):
            raise OptionError(f"option {key} is missing a value")
        if key[1:] in pairs:
            raise OptionError(f"duplicate option {key}")
        pairs[key[1:]] = flat[i + 1]
        i += 2
    return pairs


def _parse_fields(value: str) -> tuple[int, ...]:
    try:
        fields = tuple(int(tok) for tok in value.split(","))
    except ValueError as exc:
        raise OptionError(f"malformed field list {value!r}") from exc
    return fields


def _pop(opts, key, allowed=None):
    if key not in opts:
        raise OptionError(f"missing required option -{key}")
    val = opts.pop(key)
    if allowed is not None and val not in allowed:
        raise OptionError(f"-{key} {val} is not supported (expected one of {sorted(allowed)})")
    return val


def _parse_split(opts, prefix, groups) -> SplitNode:
    split_type = _pop(opts, f"{prefix}pc_fieldsplit_type", {"additive", "schur"})
    fact = prec = None
    if split_type == "schur":
        fact = _pop(opts, f"{prefix}pc_fieldsplit_schur_fact_type", {"full"})
        prec = _pop(opts, f"{prefix}pc_fieldsplit_schur_precondition", {"selfp"})
    children = []
    for i, group in enumerate(groups):
        child = f"{prefix}fieldsplit_{i}_"
        _pop(opts, f"{child}ksp_type", {"preonly"})
        pc = _pop(opts, f"{child}pc_type", {"bjacobi", "hypre", "fieldsplit"})
        if pc == "fieldsplit":
            if len(group) != 2:
                raise OptionError(f"nested fieldsplit under {child[:-1]} needs exactly 2 fields")
            sub = _parse_split(opts, child, ((group[0],), (group[1],)))
            children.append(InnerSolver("fieldsplit", sub))
        else:
            children.append(InnerSolver("amg" if pc == "hypre" else pc))
    return SplitNode(tuple(groups), split_type, tuple(children), fact, prec)


def parse_options(tokens) -> SolverConfig:
    """Parse PETSc-style option tokens into a validated SolverConfig tree.

    Unknown or leftover tokens are hard errors; every split level must
    produce two groups whose union partitions the four fields.
    """
    opts = _tokens_to_pairs(tokens)
    ksp = _pop(opts, "ksp_type", {"gmres"})
    _pop(opts, "pc_type", {"fieldsplit"})

    g0 = _parse_fields(_pop(opts, "pc_fieldsplit_0_fields"))
    if "pc_fieldsplit_1_fields" in opts:
        g1 = _parse_fields(opts.pop("pc_fieldsplit_1_fields"))
    else:
        g1 = tuple(f for f in ALL_FIELDS if f not in g0)
    for g in (g0, g1):
        if len(g) != 2 or len(set(g)) != 2:
            raise OptionError(f"field group {g} must contain exactly 2 distinct fields")
    if sorted(g0 + g1) != list(ALL_FIELDS):
        raise OptionError(f"field groups {g0} and {g1} do not partition {ALL_FIELDS}")

    split = _parse_split(opts, "", (g0, g1))
    if opts:
        raise OptionError(f"unsupported option(s): {', '.join('-' + k for k in sorted(opts))}")
    return SolverConfig(split=split, ksp_type=ksp)


def method_config(method: str, rtol: float = 1e-7, restart: int = 30,
                  max_iter: int = 1000) -> SolverConfig:
    tokens = {"scale": SCALE_SPLIT_OPTIONS, "field": FIELD_SPLIT_OPTIONS}.get(method)
    if tokens is None:
        raise ValueError(f"unknown method {method!r} (expected 'scale' or 'field')")
    return replace(parse_options(tokens), rtol=rtol, restart=restart, max_iter=max_iter)


# ---------------------------------------------------------------------------
# preconditioner composition


@dataclass
class Preconditioner:
    apply: Callable[[np.ndarray], np.ndarray]
    description: str
    setup_time_s: float

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)


def _submatrix(M, rows, cols):
    return M[rows][:, cols].tocsr()


def _build_leaf(inner: InnerSolver, M, field_ids, sizes):
    if inner.pc_type == "bjacobi":
        fact = ilu0(M)
        return (lambda r: apply_ilu0(fact, r)), "bjacobi/ilu0"
    if inner.pc_type == "amg":
        hier = amg_setup(M)
        return (lambda r: amg_vcycle(hier, r)), f"amg[{hier.level_count}]"
    return _build_node(inner.split, M, field_ids, sizes)


def _build_node(node: SplitNode, M, field_ids, sizes):
    """Compose the preconditioner application for one split level.

    M is this level's preconditioning matrix (a sub-block of the global
    matrix, or a Schur preconditioning matrix from the level above);
    field_ids are the global field numbers laid out consecutively in M.
    """
    offsets = np.cumsum([0] + [sizes[f] for f in field_ids])
    local = {f: np.arange(offsets[i], offsets[i + 1]) for i, f in enumerate(field_ids)}
    gA, gB = node.groups
    idxA = np.concatenate([local[f] for f in gA])
    idxB = np.concatenate([local[f] for f in gB])

    A = _submatrix(M, idxA, idxA)
    D = _submatrix(M, idxB, idxB)

    if node.split_type == "additive":
        pcA, dA = _build_leaf(node.children[0], A, gA, sizes)
        pcB, dB = _build_leaf(node.children[1], D, gB, sizes)

        def apply_additive(r):
            z = np.zeros_like(r)
            z[idxA] = pcA(r[idxA])
            z[idxB] = pcB(r[idxB])
            return z

        return apply_additive, f"additive({dA}, {dB})"

    B = _submatrix(M, idxA, idxB)
    C = _submatrix(M, idxB, idxA)
    Sp = schur_selfp(D, C, diag_lump(A), B)
    pcA, dA = _build_leaf(node.children[0], A, gA, sizes)
    pcS, dS = _build_leaf(node.children[1], Sp, gB, sizes)

    def apply_schur_full(r):
        # full factorization: all three factors with approximate inverses
        zA = pcA(r[idxA])
        zB = pcS(r[idxB] - C @ zA)
        zA = zA - pcA(B @ zB)
        z = np.zeros_like(r)
        z[idxA] = zA
        z[idxB] = zB
        return z

    return apply_schur_full, f"schur-full({dA}, selfp->{dS})"


def build_preconditioner(block_system: BlockSystem, config: SolverConfig,
                         monolithic=None) -> Preconditioner:
    t0 = time.perf_counter()
    K = monolithic if monolithic is not None else monolithic_view(block_system)[0]
    sizes = {i: block_system.field_sizes[FIELDS[i]] for i in ALL_FIELDS}
    apply, desc = _build_node(config.split, K, ALL_FIELDS, sizes)
    return Preconditioner(apply, desc, time.perf_counter() - t0)


def build_scale_split(block_system: BlockSystem) -> Preconditioner:
    """Method 1: independent full Schur factorizations per pore network."""
    return build_preconditioner(block_system, parse_options(SCALE_SPLIT_OPTIONS))


def build_field_split(block_system: BlockSystem) -> Preconditioner:
    """Method 2: one Schur factorization over the velocity/pressure groups."""
    return build_preconditioner(block_system, parse_options(FIELD_SPLIT_OPTIONS))


# ---------------------------------------------------------------------------
# driver


@dataclass
class SolveReport:
    fields: dict[str, np.ndarray]
    stats: KrylovStats
    assembly_s: float
    solve_s: float
    total_s: float
    method: str

    @property
    def converged(self) -> bool:
        return self.stats.converged

    def solution_vector(self) -> np.ndarray:
        return np.concatenate([self.fields[name] for name in FIELDS])

    def to_keyvalue(self) -> str:
        items = {
            "method": self.method, "converged": self.stats.converged,
            "ksp": self.stats.iterations, "relative_residual": self.stats.relative_residual,
            "assembly_s": self.assembly_s, "solve_s": self.solve_s, "total_s": self.total_s,
            "dof": sum(len(v) for v in self.fields.values()),
        }
        return "\n".join(f"{k}={v}" for k, v in items.items())

    CSV_HEADER = "method,dof,ksp,converged,relative_residual,assembly_s,solve_s,total_s"

    def to_csv_row(self) -> str:
        return ",".join(str(v) for v in (
            self.method.replace(",", ";"), sum(len(v) for v in self.fields.values()),
            self.stats.iterations, int(self.stats.converged),
            f"{self.stats.relative_residual:.6e}",
            f"{self.assembly_s:.6e}", f"{self.solve_s:.6e}", f"{self.total_s:.6e}"))


def solve(block_system: BlockSystem, config: SolverConfig) -> SolveReport:
    """Outer GMRES on the monolithic system with the composed preconditioner.

    Non-convergence is reported through the returned stats, never silently.
    """
    t0 = time.perf_counter()
    K, f = monolithic_view(block_system)
    pc = build_preconditioner(block_system, config, monolithic=K)
    x, stats = gmres(K, f, preconditioner=pc, rtol=config.rtol,
                     max_iter=config.max_iter, restart=config.restart)
    solve_s = time.perf_counter() - t0
    assembly_s = block_system.stats.wall_time_s if block_system.stats else 0.0
    return SolveReport(fields=block_system.split_solution(x), stats=stats,
                       assembly_s=assembly_s, solve_s=solve_s,
                       total_s=assembly_s + solve_s, method=pc.description)
