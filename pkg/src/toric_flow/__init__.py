"""Numerical laboratory for geodesic-type flows on twisted torus bundles.

The configuration space is the product of an n-torus (coordinates x,
angle-valued) with a line (coordinate s), carrying the metric
Q(s) = exp(sA)^T exp(sA) on the torus factor plus ds^2, and a
1-periodic potential V(s).  The torus momenta pbar are conserved, which
makes the flow integrable; when exp(A) is an integer unimodular matrix
the whole system descends to a compact suspension bundle where the same
flow can carry positive topological entropy.
"""

from .analysis import (
    LyapunovEstimate,
    ScanReport,
    ScanRow,
    SectionCrossing,
    SectionSpec,
    analytic_mle_oracle,
    entropy_scan,
    find_section_crossings,
    mle_benettin,
    poincare_return,
)
from .config import (
    BUNDLED,
    AnalysisSpec,
    SamplerSpec,
    Scenario,
    initial_state,
    load_scenario,
    parse_scenario,
    scenario_to_dict,
)
from .dynamics import (
    FlowDerivative,
    IntegratorConfig,
    Trajectory,
    flow_jacobian,
    flow_with_tangents,
    integrate,
    step,
    vector_field,
)
from .errors import (
    ConfigError,
    DegenerateLeafError,
    MetricRangeError,
    NoReturnError,
    NotAnAutomorphismError,
    StepFailure,
    ToricFlowError,
)
from .geometry import (
    AutomorphismCheck,
    CouplingMatrix,
    MetricEvaluation,
    PhasePoint,
    as_coupling,
    check_integer_automorphism,
    deck_transform,
    hamiltonian,
    matrix_exp,
    metric_at,
    riemannian_norm,
    wrap_to_fundamental,
)
from .potential import FourierPotential, PotentialExtrema, find_extrema
from .reduction import (
    LeafDescriptor,
    SingularityReport,
    TurningPoints,
    classify_point,
    effective_critical_points,
    effective_potential,
    integral_map_jacobian,
    leaf_classify,
    reduced_period_and_frequencies,
    turning_points,
)
from .verify import CheckResult, verify_suite

__version__ = "0.1.0"

__all__ = [
    "AnalysisSpec",
    "AutomorphismCheck",
    "BUNDLED",
    "CheckResult",
    "ConfigError",
    "CouplingMatrix",
    "DegenerateLeafError",
    "FlowDerivative",
    "FourierPotential",
    "IntegratorConfig",
    "LeafDescriptor",
    "LyapunovEstimate",
    "MetricEvaluation",
    "MetricRangeError",
    "NoReturnError",
    "NotAnAutomorphismError",
    "PhasePoint",
    "PotentialExtrema",
    "SamplerSpec",
    "ScanReport",
    "ScanRow",
    "Scenario",
    "SectionCrossing",
    "SectionSpec",
    "SingularityReport",
    "StepFailure",
    "ToricFlowError",
    "Trajectory",
    "TurningPoints",
    "analytic_mle_oracle",
    "as_coupling",
    "check_integer_automorphism",
    "classify_point",
    "deck_transform",
    "effective_critical_points",
    "effective_potential",
    "entropy_scan",
    "find_extrema",
    "find_section_crossings",
    "flow_jacobian",
    "flow_with_tangents",
    "hamiltonian",
    "initial_state",
    "integral_map_jacobian",
    "integrate",
    "leaf_classify",
    "load_scenario",
    "matrix_exp",
    "metric_at",
    "mle_benettin",
    "parse_scenario",
    "poincare_return",
    "reduced_period_and_frequencies",
    "riemannian_norm",
    "scenario_to_dict",
    "step",
    "turning_points",
    "vector_field",
    "verify_suite",
    "wrap_to_fundamental",
]
