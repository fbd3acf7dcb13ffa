"""Experiment driver: single solves, mesh-convergence sweeps, static-scaling
sweeps and efficacy reports, emitting the benchmark CSV schema, fitted-slope
summaries, gnuplot scripts and PNG figures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import plots, spectrum
from .elements import Formulation
from .mesh import CellKind
from .problem import load_parameters, paper_2d_parameters, paper_3d_parameters

MODES = ("solve", "convergence", "static-scaling", "doe")


@dataclass
class ExperimentPlan:
    mode: str
    formulation: Formulation = Formulation.HDIV
    cell: CellKind = CellKind.TRI
    sweep: list[int] = field(default_factory=list)
    method: str = "field"
    petsc_options: str | None = None
    rtol: float = 1e-7
    repeats: int = 1
    out: Path = Path(".")
    params: str = "auto"
    workers: int = 1
    figures: bool = True
    synthetic_l2: float | None = None
    synthetic_time: float | None = None

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        synthetic = self.mode == "doe" and self.synthetic_l2 is not None
        if not synthetic:
            if not self.sweep:
                raise ValueError("no mesh size given (--ndiv or --sweep)")
            if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
                raise ValueError("sweep list must be strictly increasing")
            if self.mode == "solve" and len(self.sweep) != 1:
                raise ValueError("solve mode takes a single --ndiv")
        if self.formulation is not None:
            Formulation(self.formulation)
        CellKind(self.cell)

    @property
    def method_tag(self) -> str:
        return "custom" if self.petsc_options else self.method

    def csv_path(self) -> Path:
        name = f"{self.mode}_{Formulation(self.formulation).value}_{CellKind(self.cell).value}_{self.method_tag}.csv"
        return Path(self.out) / name


def _petsc_tokens(value: str | None):
    """Accept the option grammar inline or as lines in a file."""
    if value is None:
        return None
    if not value.lstrip().startswith("-"):
        try:
            path = Path(value)
            if path.is_file():
                return path.read_text().split()
        except OSError:
            pass
    return value


def _parameters(plan: ExperimentPlan):
    if plan.params == "auto":
        return None  # run_case picks the dimension default
    if plan.params == "paper-2d":
        return paper_2d_parameters()
    if plan.params == "paper-3d":
        return paper_3d_parameters()
    return load_parameters(plan.params, dim=CellKind(plan.cell).dim)


def _synthetic_doe_records(plan: ExperimentPlan) -> list[spectrum.SpectrumRecord]:
    l2 = float(plan.synthetic_l2)
    t = float(plan.synthetic_time)
    rec = spectrum.SpectrumRecord(
        formulation=Formulation(plan.formulation), cell_kind=CellKind(plan.cell),
        n_div=plan.sweep[0] if plan.sweep else 0, dof=1, ksp=0,
        assembly_s=t / 2, solve_s=t / 2, total_s=t,
        l2={f: l2 for f in ("u1", "p1", "u2", "p2")})
    return [rec]


def run(plan: ExperimentPlan) -> int:
    """Execute a plan; returns a process exit status and writes artifacts."""
    try:
        plan.validate()
        out_dir = Path(plan.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        params = _parameters(plan)

        if plan.mode == "doe" and plan.synthetic_l2 is not None:
            if plan.synthetic_time is None:
                raise ValueError("--synthetic-l2 requires --synthetic-time")
            records = _synthetic_doe_records(plan)
        elif plan.mode == "solve":
            rec = spectrum.run_case(
                plan.formulation, plan.cell, plan.sweep[0], method=plan.method,
                rtol=plan.rtol, params=params, repeats=plan.repeats,
                petsc_options=_petsc_tokens(plan.petsc_options), workers=plan.workers)
            records = [rec]
            l2s = " ".join(f"l2_{k}={v:.4e}" for k, v in rec.l2.items())
            print(f"solved dof={rec.dof} ksp={rec.ksp} total_s={rec.total_s:.3f} {l2s}")
        else:
            records = []
            for n in plan.sweep:
                records.append(spectrum.run_case(
                    plan.formulation, plan.cell, n, method=plan.method, rtol=plan.rtol,
                    params=params, repeats=plan.repeats,
                    petsc_options=_petsc_tokens(plan.petsc_options),
                    workers=plan.workers))
                print(f"done {plan.formulation} {plan.cell} n={n} "
                      f"dof={records[-1].dof} ksp={records[-1].ksp}")

        csv_path = plan.csv_path()
        spectrum.write_csv(records, csv_path)
        print(f"wrote {csv_path}")

        if plan.mode == "convergence" and len(records) >= 3:
            slopes = spectrum.convergence_slope(records)
            summary = csv_path.with_name(csv_path.stem + "_slopes.txt")
            lines = [f"# {spectrum.SLOPE_SIGN_NOTE}"]
            lines += [f"{name} {val:.6f}" for name, val in slopes.items()]
            summary.write_text("\n".join(lines) + "\n")
            print(f"wrote {summary}")

        for path in plots.emit_plots(csv_path):
            print(f"wrote {path}")
        if plan.figures:
            for path in plots.render_figures(csv_path):
                print(f"wrote {path}")
        return 0
    except Exception as exc:  # single-line machine-parsable diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def emit_plots(csv_path):
    """Gnuplot script + data file emission for a schema-conformant CSV."""
    return plots.emit_plots(csv_path)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dppflow",
        description="Benchmark driver for the four-field dual-porosity solvers")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--formulation", choices=[f.value for f in Formulation])
    p.add_argument("--cell", choices=[c.value for c in CellKind])
    p.add_argument("--ndiv", type=int, help="single mesh subdivision count")
    p.add_argument("--sweep", type=str, help="comma-separated increasing n_div list")
    p.add_argument("--method", choices=["scale", "field"])
    p.add_argument("--petsc-options", type=str, dest="petsc_options",
                   help="raw solver option tokens routed to the option parser")
    p.add_argument("--rtol", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", type=str)
    p.add_argument("--params", type=str,
                   help="'paper-2d', 'paper-3d', 'auto' or a key=value file")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--synthetic-l2", type=float, dest="synthetic_l2")
    p.add_argument("--synthetic-time", type=float, dest="synthetic_time")
    p.add_argument("--config", type=str, help="key=value file; flags take precedence")
    return p


_DEFAULTS = dict(mode=None, formulation="hdiv", cell="tri", method="field",
                 petsc_options=None, rtol=1e-7, repeats=1, out=".", params="auto",
                 workers=1, synthetic_l2=None, synthetic_time=None)


def _plan_from_args(args) -> ExperimentPlan:
    config = {}
    if args.config:
        for raw in Path(args.config).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                key, _, val = line.replace("=", " ").partition(" ")
                config[key.strip().replace("-", "_")] = val.strip()

    def pick(name, cast=None):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in config:
            return cast(config[name]) if cast else config[name]
        return _DEFAULTS.get(name)

    sweep_raw = pick("sweep")
    ndiv = pick("ndiv", int)
    if sweep_raw:
        sweep = [int(tok) for tok in str(sweep_raw).split(",") if tok.strip()]
    elif ndiv is not None:
        sweep = [int(ndiv)]
    else:
        sweep = []

    mode = pick("mode")
    if mode is None:
        raise ValueError("--mode is required")
    return ExperimentPlan(
        mode=mode,
        formulation=Formulation(pick("formulation")),
        cell=CellKind(pick("cell")),
        sweep=sweep,
        method=pick("method"),
        petsc_options=pick("petsc_options"),
        rtol=pick("rtol", float),
        repeats=pick("repeats", int),
        out=Path(pick("out")),
        params=pick("params"),
        workers=pick("workers", int),
        figures=not args.no_figures,
        synthetic_l2=pick("synthetic_l2", float),
        synthetic_time=pick("synthetic_time", float),
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        plan = _plan_from_args(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return run(plan)


if __name__ == "__main__":
    sys.exit(main())
