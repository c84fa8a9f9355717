"""Concentration inequalities for geometric Poisson functionals."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateEventError,
    DivergentIntegralError,
    DivergentMeanError,
    EnvelopeTooLooseError,
    InvalidArgumentError,
    PoissonConcError,
    PropertyViolationError,
    UnsupportedDimensionError,
    UnsupportedGeometryError,
)
from .model import (
    HomogeneousBox,
    HomogeneousTorus,
    IntensityModel,
    PointConfiguration,
    RadialDensity,
    Window,
    edge_count_mean,
    load_model,
    model_from_dict,
    save_model,
)
from .sampler import SeedSpec, mecke_check, sample
from .graph import (
    DiskGraph,
    GeometricGraph,
    IntersectionGraph,
    build_graph,
    check_edge_inequalities,
    degree_square_sum,
    edge_count,
    half_ball_partition,
    sup_cell_count,
    sup_weighted_ball_count,
    triangle_count,
)
from .ustat import (
    EdgeIndicator,
    LengthPower,
    UserKernel,
    VariableRadiusLength,
    add_one_cost,
    evaluate,
    local_versions,
    marginal_norms,
    v_statistics,
    variance_decomposition,
)
from .bounds import BoundCurve, chi, make_curve, rate_asymptotics
from .convex import ConvexDistanceProblem, ThresholdEvent, convex_distance, deficiency_set
from .harness import (
    ExperimentSpec,
    TailReport,
    run_clt_consistency,
    run_infinite_edges_experiment,
    run_tail_experiment,
    wu_entropy_diagnostic,
)
