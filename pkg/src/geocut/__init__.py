"""Geodesics, conjugate/cut loci and singularity classification on level-set submanifolds."""

from .errors import (
    GeocutError,
    NewtonDiverged,
    RankDeficient,
    ChartInvalid,
    ConstraintViolated,
    EvaluationFailed,
    InvalidDimension,
)
from .constraints import (
    ConstraintSpec,
    Ellipsoid,
    TangentChart,
    OutputChart,
    eval_constraint,
    tangent_frame,
    chart_lift,
    plane_constraint,
    project_to_manifold,
)
from .dual import Dual, HyperDual, jacobian, fd_jacobian, jvp
from .bvp import BvpProblem, GeodesicSolution, MultistartResult, shooting_residual, solve_bvp, count_solutions
from .integrators import (
    SolverConfig,
    DiscreteTrajectory,
    del_step,
    discrete_legendre,
    symplectic_euler_step,
    rk2_step,
    integrate,
    kkt_solve,
    kkt_residual,
    straight_chord_guess,
)
from .locus import (
    EndpointMapSpec,
    MeshScan,
    CriticalSet,
    LocusDiagram,
    ClassifierConfig,
    CuspResult,
    UmbilicResult,
    endpoint_map,
    endpoint_map_batch,
    chart_det,
    chart_det_batch,
    grad_chart_det_batch,
    auto_output_chart,
    scan_mesh,
    extract_critical_set,
    map_locus,
    classify_vertices,
    classify_singular_point,
    classify_map_point,
    refine_cusps,
    detect_umbilics,
    compute_locus_diagram,
)

__version__ = "0.1.0"
