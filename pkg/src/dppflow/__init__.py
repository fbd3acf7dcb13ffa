"""Four-field dual pore-network Darcy solvers with composable block
preconditioners and a time-accuracy-size benchmark harness."""

from .elements import ElementFamily, Formulation, dof_count, quadrature_rule
from .mesh import CellKind, Mesh, cell_geometry, facet_adjacency, generate_unit_mesh
from .problem import (
    DppParameters,
    boundary_data,
    constant_mms,
    eta,
    exact_solution_2d,
    exact_solution_3d,
    manufactured_solution,
    paper_2d_parameters,
    paper_3d_parameters,
)
from .assembly import BlockSystem, assemble, monolithic_view, solution_fields
from .blocksolve import (
    FIELD_SPLIT_OPTIONS,
    SCALE_SPLIT_OPTIONS,
    build_field_split,
    build_scale_split,
    method_config,
    parse_options,
    solve,
)
from .spectrum import (
    EfficiencySeries,
    SpectrumRecord,
    convergence_slope,
    doa,
    doe,
    dos,
    l2_error,
    parallel_efficiency,
    run_case,
    static_scaling_run,
)

__version__ = "0.1.0"
