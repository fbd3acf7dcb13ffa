import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dppflow import spectrum
from dppflow.assembly import DiscreteField, assemble_cgvms, monolithic_view
from dppflow.elements import Formulation, quadrature_rule
from dppflow.mesh import CellKind, generate_unit_mesh
from dppflow.problem import boundary_data
from dppflow.spectrum import (
    CSV_COLUMNS,
    EfficiencySeries,
    SpectrumRecord,
    StaticScalingError,
    convergence_slope,
    doa,
    doe,
    dos,
    field_errors,
    l2_error,
    parallel_efficiency,
    read_csv,
    run_case,
    static_scaling_run,
    write_csv,
)


def make_record(n, l2, dof, total=2.0):
    return SpectrumRecord(formulation=Formulation.CG_VMS, cell_kind=CellKind.TRI,
                          n_div=n, dof=dof, ksp=5, assembly_s=1.0, solve_s=1.0,
                          total_s=total, l2={f: l2 for f in ("u1", "p1", "u2", "p2")})


# -- digit metrics ---------------------------------------------------------------


def test_digit_formulas():
    assert abs(doa(1e-3) - 3.0) < 1e-14
    assert abs(doe(1e-3, 10.0) - 2.0) < 1e-14
    assert abs(dos(216) - (-2.3345)) < 1e-4
    assert abs(dos(10) + 1.0) < 1e-14


def test_digit_formula_domains():
    with pytest.raises(ValueError):
        doa(0.0)
    with pytest.raises(ValueError):
        dos(0)
    with pytest.raises(ValueError):
        doe(1e-3, 0.0)


@given(l2=st.floats(1e-12, 1e3), t=st.floats(1e-6, 1e4))
@settings(max_examples=50, deadline=None)
def test_doe_composes_doa_and_time(l2, t):
    assert math.isclose(doe(l2, t), doa(l2) - math.log10(t), rel_tol=1e-12, abs_tol=1e-12)


def test_parallel_efficiency_values():
    # printed-time check: the unrounded-source value is 70.6363
    assert abs(parallel_efficiency(1.26, 0.893, 2) - 70.6363) < 0.5
    assert parallel_efficiency(3.7, 3.7, 1) == 100.0
    assert parallel_efficiency(8.0, 1.0, 8) == 100.0
    with pytest.raises(ValueError):
        parallel_efficiency(0.0, 1.0, 2)


def test_efficiency_series():
    series = EfficiencySeries.from_times([1, 2, 4], [8.0, 5.0, 3.0])
    assert series.efficiencies[0] == 100.0
    assert abs(series.efficiencies[1] - 80.0) < 1e-12
    with pytest.raises(ValueError):
        EfficiencySeries.from_times([2, 4], [5.0, 3.0])


def test_record_derived_metrics_recomputable():
    rec = make_record(4, 1e-2, 500, total=4.0)
    assert abs(rec.doa["u1"] - doa(rec.l2["u1"])) < 1e-12
    assert abs(rec.dos - dos(rec.dof)) < 1e-12
    assert abs(rec.doe["p2"] - doe(rec.l2["p2"], rec.total_s)) < 1e-12
    assert abs(rec.rates["total"] - rec.dof / rec.total_s) < 1e-12
    assert rec.rates["solve"] == rec.dof / rec.solve_s


# -- L2 errors ---------------------------------------------------------------------


def test_l2_error_of_interpolant_against_itself(params2d, mms2d):
    # a field measured against its own pointwise values vanishes identically
    mesh = generate_unit_mesh(2, CellKind.TRI, 4)
    nodal = mms2d.p1(mesh.vertices)
    field = DiscreteField(mesh, Formulation.CG_VMS, "p1", nodal)
    rule = quadrature_rule(mesh.cell_kind, 4)
    own_values = field.evaluate_all(rule.points)
    err = l2_error(field, lambda pts: own_values.reshape(-1), mesh, 4)
    assert err < 1e-14


def test_l2_error_constant_offset():
    mesh = generate_unit_mesh(2, CellKind.QUAD, 3)
    zero = DiscreteField(mesh, Formulation.HDIV, "p1", np.zeros(mesh.n_cells))
    c = -7.25
    err = l2_error(zero, lambda pts: np.full(len(pts), c), mesh, 4)
    assert abs(err - abs(c)) < 1e-12


def test_l2_error_interpolation_error_vs_high_degree_oracle(params2d):
    mesh = generate_unit_mesh(2, CellKind.TRI, 8)
    f = lambda pts: np.sin(np.pi * pts[..., 0]) * np.sin(np.pi * pts[..., 1])
    nodal = f(mesh.vertices)
    field = DiscreteField(mesh, Formulation.CG_VMS, "p1", nodal)
    base = l2_error(field, f, mesh, 4)

    # independent degree-8 oracle: collapsed 5x5 Gauss product per triangle,
    # with the P1 interpolant evaluated barycentrically from the nodal values
    gx, gw = np.polynomial.legendre.leggauss(5)
    gx, gw = 0.5 * (gx + 1.0), 0.5 * gw
    U, V = np.meshgrid(gx, gx, indexing="ij")
    WU, WV = np.meshgrid(gw, gw, indexing="ij")
    ref = np.column_stack([U.ravel(), (V * (1 - U)).ravel()])
    wts = (WU * WV * (1 - U)).ravel()
    lam = np.column_stack([1 - ref.sum(axis=1), ref[:, 0], ref[:, 1]])
    total = 0.0
    for c in range(mesh.n_cells):
        verts = mesh.vertices[mesh.cells[c]]
        J = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
        det = abs(np.linalg.det(J))
        pts = verts[0] + ref @ J.T
        uh = lam @ nodal[mesh.cells[c]]
        total += det * wts @ (uh - f(pts)) ** 2
    oracle = math.sqrt(total)
    assert abs(base - oracle) / oracle < 1e-3  # agree to 3 significant digits
    assert 1e-3 < base < 1e-1  # O(h^2) interpolation error ballpark


def test_l2_error_quadrature_uplift_below_one_percent(params2d, mms2d):
    import scipy.sparse.linalg as spla
    mesh = generate_unit_mesh(2, CellKind.TRI, 6)
    bs = assemble_cgvms(mesh, params2d, boundary_data(mms2d, mesh))
    K, f = monolithic_view(bs)
    x = spla.spsolve(K.tocsc(), f)
    e4 = field_errors(bs, x, mms2d, quadrature_degree=4)
    e6 = field_errors(bs, x, mms2d, quadrature_degree=6)
    for name in e4:
        assert abs(e4[name] - e6[name]) / e6[name] < 0.01


# -- slopes --------------------------------------------------------------------------


def test_convergence_slope_synthetic_second_order():
    # L2 = h^2 with DoF = h^-2 gives |slope| = 1 exactly
    recs = [make_record(n, (1.0 / n) ** 2, n * n) for n in (4, 8, 16, 32)]
    slopes = convergence_slope(recs)
    for v in slopes.values():
        assert abs(v - 1.0) < 1e-10


def test_convergence_slope_synthetic_first_order_3d():
    recs = [make_record(n, 1.0 / n, n ** 3) for n in (4, 8, 16)]
    slopes = convergence_slope(recs)
    for v in slopes.values():
        assert abs(v - 1.0 / 3.0) < 1e-10


def test_convergence_slope_input_validation():
    recs = [make_record(n, 1.0 / n, n * n) for n in (4, 8)]
    with pytest.raises(ValueError):
        convergence_slope(recs)
    bad = [make_record(4, 0.1, 100), make_record(8, 0.05, 100), make_record(16, 0.02, 90)]
    with pytest.raises(ValueError):
        convergence_slope(bad)


# -- benchmark runs --------------------------------------------------------------------


def test_run_case_produces_consistent_record():
    rec = run_case(Formulation.HDIV, CellKind.TRI, 4, method="scale", rtol=1e-8)
    assert rec.dof == 176
    assert rec.ksp > 0
    assert rec.solve_s > 0 and rec.assembly_s >= 0
    assert set(rec.l2) == {"u1", "p1", "u2", "p2"}
    assert all(v > 0 for v in rec.l2.values())


def test_run_case_with_raw_option_tokens():
    from dppflow.blocksolve import FIELD_SPLIT_OPTIONS
    rec = run_case(Formulation.HDIV, CellKind.TRI, 3, petsc_options=FIELD_SPLIT_OPTIONS,
                   rtol=1e-8)
    assert rec.ksp > 0


def test_static_scaling_run_records():
    records = static_scaling_run(Formulation.HDIV, CellKind.TRI, [2, 4], rtol=1e-8)
    assert len(records) == 2
    assert records[0].dof < records[1].dof
    for rec in records:
        assert rec.solve_s > 0
        assert rec.assembly_s >= 0
        assert rec.rates["total"] > 0


def test_static_scaling_flags_partial_failure():
    with pytest.raises(StaticScalingError) as err:
        static_scaling_run(Formulation.HDIV, CellKind.TRI, [2, 4], rtol=1e-13, max_iter=2)
    assert isinstance(err.value.records, list)


def test_static_scaling_rejects_bad_sweep():
    with pytest.raises(ValueError):
        static_scaling_run(Formulation.HDIV, CellKind.TRI, [4, 4])
    with pytest.raises(ValueError):
        static_scaling_run(Formulation.HDIV, CellKind.TRI, [])


# -- CSV schema ---------------------------------------------------------------------


def test_csv_roundtrip(tmp_path):
    recs = [make_record(n, (1.0 / n) ** 2, n * n) for n in (4, 8, 16)]
    path = tmp_path / "records.csv"
    write_csv(recs, path)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    rows = read_csv(path)
    assert len(rows) == 3
    assert rows[0]["formulation"] == "cgvms"
    assert int(rows[1]["dof"]) == 64
    assert abs(float(rows[2]["doe_u1"]) - doe((1 / 16) ** 2, 2.0)) < 1e-9


def test_read_csv_rejects_wrong_schema(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_csv(path)
