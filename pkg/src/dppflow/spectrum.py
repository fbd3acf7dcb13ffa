"""Time-accuracy-size performance metrics and benchmark records.

Accuracy is the L2 norm of the error per field; the derived digit metrics
are DoA = -log10(L2 error), DoS = -log10(DoF) and DoE = -log10(L2 * time).
Slopes of DoA against DoS are reported as magnitudes: with this sign
convention for DoS the raw least-squares slope is negative, so |slope|
recovers the classical rate-over-dimension ratio.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import blocksolve
from .assembly import FIELDS, BlockSystem, DiscreteField, assemble, solution_fields
from .elements import Formulation, dof_count, quadrature_rule
from .mesh import CellKind, Mesh, generate_unit_mesh
from .problem import (
    DppParameters,
    ManufacturedSolution,
    boundary_data,
    manufactured_solution,
    paper_2d_parameters,
    paper_3d_parameters,
)

CSV_COLUMNS = ("formulation,cell,ndiv,dof,ksp,assembly_s,solve_s,total_s,"
               "l2_u1,l2_p1,l2_u2,l2_p2,doa_u1,doa_p1,doa_u2,doa_p2,dos,"
               "doe_u1,doe_p1,doe_u2,doe_p2,dof_per_s_total").split(",")

SLOPE_SIGN_NOTE = ("slopes are |dDoA/dDoS| magnitudes; the raw slope is negative "
                   "under DoS = -log10(DoF)")


def doa(l2: float) -> float:
    """Digits of accuracy, -log10 of the L2 error."""
    if l2 <= 0:
        raise ValueError("doa requires a positive L2 error")
    return -math.log10(l2)


def dos(dof: int) -> float:
    """Digits of size, -log10 of the DoF count."""
    if dof <= 0:
        raise ValueError("dos requires a positive DoF count")
    return -math.log10(dof)


def doe(l2: float, time_s: float) -> float:
    """Digits of efficacy, -log10(L2 error x wall time)."""
    if l2 <= 0 or time_s <= 0:
        raise ValueError("doe requires positive L2 error and time")
    return -math.log10(l2 * time_s)


def parallel_efficiency(t1: float, tp: float, workers: int) -> float:
    """Strong-scaling efficiency T1 / (Tp * workers) * 100%."""
    if t1 <= 0 or tp <= 0 or workers <= 0:
        raise ValueError("parallel_efficiency requires positive times and workers")
    return t1 / (tp * workers) * 100.0


@dataclass(frozen=True)
class EfficiencySeries:
    workers: tuple[int, ...]
    times: tuple[float, ...]
    efficiencies: tuple[float, ...]

    @staticmethod
    def from_times(workers, times) -> "EfficiencySeries":
        workers = tuple(int(w) for w in workers)
        times = tuple(float(t) for t in times)
        if not workers or workers[0] != 1:
            raise ValueError("series must start at 1 worker")
        t1 = times[0]
        eff = tuple(parallel_efficiency(t1, t, w) for w, t in zip(workers, times))
        return EfficiencySeries(workers, times, eff)


@dataclass
class SpectrumRecord:
    """One benchmark observation: size, accuracy, timings and derived digits."""

    formulation: Formulation
    cell_kind: CellKind
    n_div: int
    dof: int
    ksp: int
    assembly_s: float
    solve_s: float
    total_s: float
    l2: dict[str, float] = dc_field(default_factory=dict)

    @property
    def doa(self) -> dict[str, float]:
        return {f: doa(v) for f, v in self.l2.items()}

    @property
    def dos(self) -> float:
        return dos(self.dof)

    @property
    def doe(self) -> dict[str, float]:
        return {f: doe(v, self.total_s) for f, v in self.l2.items()}

    @property
    def rates(self) -> dict[str, float]:
        """DoF processed per second, per phase."""
        return {"assembly": self.dof / self.assembly_s if self.assembly_s > 0 else math.inf,
                "solve": self.dof / self.solve_s,
                "total": self.dof / self.total_s}

    def csv_row(self) -> list[str]:
        vals = [self.formulation.value, self.cell_kind.value, self.n_div, self.dof, self.ksp,
                f"{self.assembly_s:.6e}", f"{self.solve_s:.6e}", f"{self.total_s:.6e}"]
        vals += [f"{self.l2[f]:.12e}" for f in FIELDS]
        vals += [f"{self.doa[f]:.12f}" for f in FIELDS]
        vals.append(f"{self.dos:.12f}")
        vals += [f"{self.doe[f]:.12f}" for f in FIELDS]
        vals.append(f"{self.rates['total']:.6e}")
        return [str(v) for v in vals]


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV schema in {path}")
        return [row for row in reader]


# ---------------------------------------------------------------------------
# error norms


def l2_error(discrete_field: DiscreteField, exact_field, mesh: Mesh,
             quadrature_degree: int = 4) -> float:
    """Elementwise quadrature of |u_h - u|^2 over the mesh.

    The default degree keeps quadrature error well below the discretization
    error of every lowest-order space used here.
    """
    if discrete_field.mesh is not mesh and discrete_field.mesh.n_cells != mesh.n_cells:
        raise ValueError("field and mesh are inconsistent")
    rule = quadrature_rule(mesh.cell_kind, quadrature_degree)
    J, det = mesh.jacobians()
    origin = mesh.vertices[mesh.cells[:, 0]]
    X = origin[:, None, :] + np.einsum("cij,qj->cqi", J, rule.points)
    vals_h = discrete_field.evaluate_all(rule.points)
    exact = np.asarray(exact_field(X.reshape(-1, mesh.dim)))
    exact = exact.reshape(vals_h.shape)
    diff2 = (vals_h - exact) ** 2
    if diff2.ndim == 3:
        diff2 = diff2.sum(axis=-1)
    total = np.einsum("q,cq,c->", rule.weights, diff2, det)
    return float(np.sqrt(total))


def field_errors(block_system: BlockSystem, x: np.ndarray, mms: ManufacturedSolution,
                 quadrature_degree: int = 4) -> dict[str, float]:
    fields = solution_fields(block_system, x)
    return {name: l2_error(fields[name], mms.field(name), block_system.mesh, quadrature_degree)
            for name in FIELDS}


# ---------------------------------------------------------------------------
# fitted convergence slopes


def convergence_slope(records: list[SpectrumRecord]) -> dict[str, float]:
    """Least-squares |DoA vs DoS| slope per field over one mesh family."""
    if len(records) < 3:
        raise ValueError("convergence_slope needs at least 3 records")
    dofs = [r.dof for r in records]
    if any(b <= a for a, b in zip(dofs, dofs[1:])):
        raise ValueError("records must have strictly increasing DoF")
    x = np.array([r.dos for r in records])
    slopes = {}
    for name in FIELDS:
        y = np.array([r.doa[name] for r in records])
        slope = np.polyfit(x, y, 1)[0]
        slopes[name] = abs(slope)
    return slopes


# ---------------------------------------------------------------------------
# benchmark execution


class StaticScalingError(RuntimeError):
    """A sweep solve failed; partial results ride along."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def run_case(formulation, cell_kind, n_div: int, method: str = "field",
             rtol: float = 1e-7, params: DppParameters | None = None,
             mms: ManufacturedSolution | None = None, repeats: int = 1,
             petsc_options=None, max_iter: int = 1000, workers: int = 1,
             quadrature_degree: int = 4) -> SpectrumRecord:
    """Assemble, solve and measure one benchmark configuration.

    With repeats > 1 the assembly and solve are re-run and the minimum of
    each phase time is kept; desk-scale timings are sub-second and noisy,
    so rate and efficacy digits need the min-of-repeats treatment.
    """
    formulation = Formulation(formulation)
    cell_kind = CellKind(cell_kind)
    mesh = generate_unit_mesh(cell_kind.dim, cell_kind, n_div)
    if params is None:
        params = paper_2d_parameters() if mesh.dim == 2 else paper_3d_parameters()
    if mms is None:
        mms = manufactured_solution(mesh.dim, params)
    bcs = boundary_data(mms, mesh)
    if petsc_options is not None:
        config = blocksolve.parse_options(petsc_options)
        config = blocksolve.SolverConfig(split=config.split, ksp_type=config.ksp_type,
                                         rtol=rtol, max_iter=max_iter)
    else:
        config = blocksolve.method_config(method, rtol=rtol, max_iter=max_iter)

    assembly_times, solve_times = [], []
    report = system = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        system = assemble(mesh, formulation, params, bcs, workers=workers)
        assembly_times.append(time.perf_counter() - t0)
        report = blocksolve.solve(system, config)
        if not report.converged:
            raise StaticScalingError(
                f"solve failed ({report.stats.reason}) for {formulation.value} "
                f"{cell_kind.value} n={n_div}", [])
        solve_times.append(report.solve_s)

    assembly_s, solve_s = min(assembly_times), min(solve_times)
    errors = field_errors(system, report.solution_vector(), mms, quadrature_degree)
    return SpectrumRecord(formulation=formulation, cell_kind=cell_kind, n_div=n_div,
                          dof=dof_count(formulation, mesh), ksp=report.stats.iterations,
                          assembly_s=assembly_s, solve_s=solve_s,
                          total_s=assembly_s + solve_s, l2=errors)


def static_scaling_run(formulation, cell_kind, n_div_list, method: str = "field",
                       rtol: float = 1e-7, repeats: int = 1,
                       params: DppParameters | None = None, max_iter: int = 1000,
                       workers: int = 1) -> list[SpectrumRecord]:
    """Fixed worker count, increasing problem size; one record per size."""
    n_div_list = list(n_div_list)
    if any(b <= a for a, b in zip(n_div_list, n_div_list[1:])) or not n_div_list:
        raise ValueError("n_div list must be nonempty and strictly increasing")
    records = []
    for n in n_div_list:
        try:
            records.append(run_case(formulation, cell_kind, n, method=method, rtol=rtol,
                                    params=params, repeats=repeats, max_iter=max_iter,
                                    workers=workers))
        except StaticScalingError as exc:
            raise StaticScalingError(f"{exc} (aborted at n={n})", records) from None
    return records
