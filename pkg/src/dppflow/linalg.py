"""Sparse kernels and the primitive solvers the block preconditioners compose.

Here CsrMatrix is scipy's csr_matrix; the solver primitives (restarted
GMRES, pattern-preserving ILU(0), aggregation multigrid) are implemented
in-module so that iteration counting, sweep semantics and the V-cycle
make-up are exactly the ones the composed preconditioners assume.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

CsrMatrix = sp.csr_matrix


class ZeroPivotError(RuntimeError):
    pass


def spmv(A, x: np.ndarray) -> np.ndarray:
    """y = A @ x with an explicit shape check."""
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def write_matrix_market(path, obj) -> None:
    if sp.issparse(obj):
        scipy.io.mmwrite(str(path), sp.coo_matrix(obj))
        return
    arr = np.asarray(obj)
    scipy.io.mmwrite(str(path), arr.reshape(-1, 1) if arr.ndim == 1 else arr)


def read_matrix_market(path):
    out = scipy.io.mmread(str(path))
    if sp.issparse(out):
        return out.tocsr()
    arr = np.asarray(out)
    return arr.ravel() if 1 in arr.shape else arr


# ---------------------------------------------------------------------------
# GMRES


@dataclass
class KrylovStats:
    iterations: int
    relative_residual: float
    converged: bool
    wall_time_s: float
    reason: str = "converged"
    history: list = field(default_factory=list)


def gmres(operator, b: np.ndarray, *, preconditioner=None, rtol: float = 1e-7,
          max_iter: int = 1000, restart: int = 30,
          x0: np.ndarray | None = None) -> tuple[np.ndarray, KrylovStats]:
    """Left-preconditioned restarted GMRES.

    Convergence is declared on the true relative residual ||b - Ax|| / ||b||;
    the preconditioned residual estimate drives the inner iteration.  A
    restart cycle with no residual improvement reports "stagnation", and
    exhausting max_iter reports "max_iter"; both leave converged=False.
    """
    t_start = time.perf_counter()
    matvec = operator if callable(operator) else (lambda v: operator @ v)
    apply_pc = preconditioner if preconditioner is not None else (lambda r: r)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros(n), KrylovStats(0, 0.0, True, time.perf_counter() - t_start)
    norm_mb = np.linalg.norm(apply_pc(b))

    history = []
    total_its = 0
    reason = "max_iter"
    converged = False
    last_cycle_res = None

    while total_its < max_iter:
        r = b - matvec(x)
        true_rel = np.linalg.norm(r) / norm_b
        if true_rel <= rtol:
            converged, reason = True, "converged"
            break
        if last_cycle_res is not None and true_rel >= last_cycle_res * 0.9999:
            reason = "stagnation"
            break
        last_cycle_res = true_rel

        z = apply_pc(r)
        beta = np.linalg.norm(z)
        if beta == 0.0:
            converged, reason = True, "converged"
            break
        m = min(restart, max_iter - total_its)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = z / beta

        k_used = 0
        happy = False
        for j in range(m):
            wv = apply_pc(matvec(V[j]))
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = V[i] @ wv
                wv -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(wv)
            if H[j + 1, j] > 1e-14 * beta:
                V[j + 1] = wv / H[j + 1, j]
            else:
                happy = True
            for i in range(j):  # apply stored Givens rotations
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if denom == 0 else (H[j, j] / denom, H[j + 1, j] / denom)
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total_its += 1
            k_used = j + 1
            history.append(abs(g[j + 1]) / norm_mb)
            if happy or abs(g[j + 1]) <= rtol * norm_mb:
                break

        R = np.triu(H[:k_used, :k_used])
        try:
            y = np.linalg.solve(R, g[:k_used])
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(R, g[:k_used], rcond=None)[0]
        x = x + V[:k_used].T @ y
        if happy:
            r = b - matvec(x)
            true_rel = np.linalg.norm(r) / norm_b
            if true_rel <= rtol or true_rel < 1e-13:
                converged, reason = True, "converged"
                break
    else:
        reason = "max_iter"

    final = np.linalg.norm(b - matvec(x)) / norm_b
    if final <= rtol:
        converged, reason = True, "converged"
    stats = KrylovStats(total_its, float(final), converged,
                        time.perf_counter() - t_start, reason, history)
    return x, stats


# ---------------------------------------------------------------------------
# ILU(0)


@dataclass
class Ilu0Factorization:
    L: sp.csr_matrix  # unit lower triangular
    U: sp.csr_matrix  # upper triangular


def ilu0(A) -> Ilu0Factorization:
    """Incomplete LU with zero fill: L and U share A's sparsity pattern."""
    A = sp.csr_matrix(A, copy=True)
    A.sort_indices()
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("ilu0 requires a square matrix")
    indptr, indices, data = A.indptr, A.indices, A.data

    diag_pos = np.full(n, -1, dtype=np.int64)
    col_pos = [dict() for _ in range(n)]
    for i in range(n):
        row = indices[indptr[i]:indptr[i + 1]]
        for p, j in zip(range(indptr[i], indptr[i + 1]), row):
            col_pos[i][j] = p
            if j == i:
                diag_pos[i] = p
    if np.any(diag_pos < 0):
        raise ZeroPivotError("missing diagonal entry in sparsity pattern")

    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        for p in range(start, end):
            k = indices[p]
            if k >= i:
                break
            pivot = data[diag_pos[k]]
            if pivot == 0.0:
                raise ZeroPivotError(f"zero pivot at row {k}")
            lik = data[p] / pivot
            data[p] = lik
            pos_i = col_pos[i]
            for q in range(diag_pos[k] + 1, indptr[k + 1]):
                j = indices[q]
                tgt = pos_i.get(j)
                if tgt is not None:
                    data[tgt] -= lik * data[q]
        if data[diag_pos[i]] == 0.0:
            raise ZeroPivotError(f"zero pivot at row {i}")

    L = sp.tril(A, k=-1, format="csr") + sp.eye(n, format="csr")
    U = sp.triu(A, k=0, format="csr")
    L.sort_indices()
    U.sort_indices()
    return Ilu0Factorization(L, U)


def apply_ilu0(fact: Ilu0Factorization, r: np.ndarray) -> np.ndarray:
    y = spsolve_triangular(fact.L, r, lower=True, unit_diagonal=True)
    return spsolve_triangular(fact.U, y, lower=False)


# ---------------------------------------------------------------------------
# diagonal extraction and Schur preconditioner product


def diag_lump(A) -> np.ndarray:
    """Diagonal of A (the "selfp" approximation of A^-1 uses 1/diag)."""
    if A.shape[0] != A.shape[1]:
        raise ValueError("diag_lump requires a square matrix")
    d = np.asarray(A.diagonal())
    if np.any(d == 0.0):
        raise ZeroPivotError("zero diagonal entry in diag_lump")
    return d


def schur_selfp(D, C, diagA: np.ndarray, B) -> sp.csr_matrix:
    """Sparse triple product D - C @ diag(diagA)^-1 @ B."""
    diagA = np.asarray(diagA)
    if np.any(diagA == 0.0):
        raise ZeroPivotError("zero entry in diagA")
    if C.shape[1] != len(diagA) or B.shape[0] != len(diagA) or D.shape != (C.shape[0], B.shape[1]):
        raise ValueError("schur_selfp: non-conforming block dimensions")
    S = (D - C @ sp.diags(1.0 / diagA) @ B).tocsr()
    S.sum_duplicates()
    S.sort_indices()
    return S


# ---------------------------------------------------------------------------
# aggregation AMG


@dataclass
class AmgLevel:
    A: sp.csr_matrix
    P: sp.csr_matrix | None
    lower: sp.csr_matrix | None  # D + L of A
    upper: sp.csr_matrix | None  # D + U of A


@dataclass
class AmgHierarchy:
    levels: list[AmgLevel]
    coarse_lu: tuple | None  # scipy.linalg.lu_factor output

    @property
    def level_count(self) -> int:
        return len(self.levels)


def _strength_aggregates(A: sp.csr_matrix, theta: float) -> np.ndarray:
    """Greedy aggregation over the strength graph; returns aggregate ids.

    A connection is strong when |a_ij| >= theta * max_k |a_ik|, so every
    connected node keeps at least its strongest neighbour and coarsening
    cannot stall on wide-stencil operators (the discontinuous Schur blocks
    have per-cell node clusters far stronger than their cross-cell ties).
    """
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data

    neighbors = []
    for i in range(n):
        cols = indices[indptr[i]:indptr[i + 1]]
        vals = np.abs(data[indptr[i]:indptr[i + 1]])
        off = cols != i
        cols, vals = cols[off], vals[off]
        if len(cols) == 0:
            neighbors.append(cols)
            continue
        neighbors.append(cols[vals >= theta * vals.max()])

    agg = np.full(n, -1, dtype=np.int64)
    next_agg = 0
    # pass 1: seed aggregates from nodes with fully unaggregated neighborhoods
    for i in range(n):
        if agg[i] != -1:
            continue
        nbrs = neighbors[i]
        if np.all(agg[nbrs] == -1):
            agg[i] = next_agg
            agg[nbrs] = next_agg
            next_agg += 1
    # pass 2: attach leftovers to an adjacent aggregate
    for i in range(n):
        if agg[i] == -1:
            tagged = agg[neighbors[i]]
            tagged = tagged[tagged != -1]
            if len(tagged):
                agg[i] = tagged[0]
    # pass 3: isolated nodes become their own aggregates
    for i in range(n):
        if agg[i] == -1:
            agg[i] = next_agg
            next_agg += 1
    return agg


def _jacobi_spectral_radius(A: sp.csr_matrix, iterations: int = 10) -> float:
    """Power-iteration estimate of rho(D^-1 A) for interpolation damping."""
    M = sp.diags(1.0 / A.diagonal()) @ A
    x = np.random.default_rng(12345).standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(iterations):
        y = M @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 1.0
        x = y / norm
    return max(float(np.linalg.norm(M @ x)), 1e-8)


def amg_setup(A, *, theta: float = 0.5, omega: float = 2.0 / 3.0,
              max_coarse: int = 64, max_levels: int = 25) -> AmgHierarchy:
    """Smoothed-aggregation hierarchy with Galerkin coarse operators.

    Piecewise-constant tentative interpolation is smoothed by one weighted
    Jacobi step with weight 2*omega/rho(D^-1 A) -- exactly omega on the
    rho ~ 2 Laplacian-like operators this is built for, and safely damped on
    wider-stencil Schur blocks.  The V-cycle uses symmetric Gauss-Seidel
    pre/post smoothing and a dense direct solve once the operator has at
    most max_coarse unknowns.
    """
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("amg_setup requires a square matrix")
    if np.any(A.diagonal() == 0.0):
        raise ZeroPivotError("structurally singular input: zero diagonal entry")

    levels = []
    current = A
    while current.shape[0] > max_coarse and len(levels) < max_levels - 1:
        agg = _strength_aggregates(current, theta)
        n_c = int(agg.max()) + 1
        if n_c >= current.shape[0]:
            if current.shape[0] > 5000:
                raise RuntimeError("aggregation stalled on a large operator")
            break
        P0 = sp.csr_matrix((np.ones(current.shape[0]), (np.arange(current.shape[0]), agg)),
                           shape=(current.shape[0], n_c))
        Dinv = sp.diags(1.0 / current.diagonal())
        damping = 2.0 * omega / _jacobi_spectral_radius(current)
        P = (P0 - damping * (Dinv @ (current @ P0))).tocsr()
        levels.append(AmgLevel(current, P,
                               sp.tril(current, k=0, format="csr"),
                               sp.triu(current, k=0, format="csr")))
        current = (P.T @ current @ P).tocsr()
        current.sum_duplicates()

    levels.append(AmgLevel(current, None, None, None))
    coarse_lu = scipy.linalg.lu_factor(current.toarray())
    return AmgHierarchy(levels, coarse_lu)


def _sgs_sweep(level: AmgLevel, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = x + spsolve_triangular(level.lower, b - level.A @ x, lower=True)
    return x + spsolve_triangular(level.upper, b - level.A @ x, lower=False)


def _vcycle(hierarchy: AmgHierarchy, lvl: int, b: np.ndarray) -> np.ndarray:
    level = hierarchy.levels[lvl]
    if level.P is None:
        return scipy.linalg.lu_solve(hierarchy.coarse_lu, b)
    x = _sgs_sweep(level, np.zeros_like(b), b)
    r_c = level.P.T @ (b - level.A @ x)
    x = x + level.P @ _vcycle(hierarchy, lvl + 1, r_c)
    return _sgs_sweep(level, x, b)


def amg_vcycle(hierarchy: AmgHierarchy, r: np.ndarray) -> np.ndarray:
    """One V(1,1) cycle applied to the residual r (zero initial guess)."""
    return _vcycle(hierarchy, 0, np.asarray(r, dtype=float))
