"""Plan how much training data to collect to hit a target score at minimum cost.

The pipeline: extrapolate measured learning curves (:mod:`dataplan.curves`),
turn fit uncertainty into a probability model of the minimum data requirement
(:mod:`dataplan.density`), optimize a multi-round collection plan against that
model (:mod:`dataplan.planner`), and evaluate collection policies against
ground-truth curve oracles (:mod:`dataplan.simulator`,
:mod:`dataplan.baselines`, :mod:`dataplan.cli`).
"""

__version__ = "0.1.0"

from .curves import (
    UNREACHABLE,
    CurveFamily,
    CurveSample,
    DomainError,
    FitConfig,
    NonMonotoneWarning,
    RegressionModel,
    RegressionSet,
    Unreachable,
    eval_curve,
    fit_curve,
    invert_curve,
)
from .density import (
    AllCensored,
    BootstrapConfig,
    RequirementDistribution,
    bootstrap_requirements,
    cdf,
    cdf_gradient,
    fit_gmm,
    fit_kde,
    marginal_quantile,
    pdf,
    quantile,
)
from .planner import (
    AssumptionViolated,
    CollectionPlan,
    LocPolicy,
    ProblemSpec,
    RoundContext,
    SolverConfig,
    analytic_one_round,
    expected_cost,
    realized_loss,
    solve_plan,
)
from .simulator import (
    DegenerateCell,
    GroundTruthCurve1D,
    GroundTruthSurface2D,
    MetricsReport,
    PolicyFailure,
    RoundOutcome,
    RunRecord,
    ShapeWarning,
    aggregate_metrics,
    eval_ground_truth_1d,
    eval_ground_truth_2d,
    run_collection,
    true_requirement,
)
from .baselines import (
    CalibrationImpossible,
    CorrectedPolicy,
    CorrectionFactor,
    RegressionPointPolicy,
    calibrate_tau,
    corrected_policy,
    regression_point_policy,
)

__all__ = [
    "__version__",
    "UNREACHABLE",
    "CurveFamily",
    "CurveSample",
    "DomainError",
    "FitConfig",
    "NonMonotoneWarning",
    "RegressionModel",
    "RegressionSet",
    "Unreachable",
    "eval_curve",
    "fit_curve",
    "invert_curve",
    "AllCensored",
    "BootstrapConfig",
    "RequirementDistribution",
    "bootstrap_requirements",
    "cdf",
    "cdf_gradient",
    "fit_gmm",
    "fit_kde",
    "marginal_quantile",
    "pdf",
    "quantile",
    "AssumptionViolated",
    "CollectionPlan",
    "LocPolicy",
    "ProblemSpec",
    "RoundContext",
    "SolverConfig",
    "analytic_one_round",
    "expected_cost",
    "realized_loss",
    "solve_plan",
    "DegenerateCell",
    "GroundTruthCurve1D",
    "GroundTruthSurface2D",
    "MetricsReport",
    "PolicyFailure",
    "RoundOutcome",
    "RunRecord",
    "ShapeWarning",
    "aggregate_metrics",
    "eval_ground_truth_1d",
    "eval_ground_truth_2d",
    "run_collection",
    "true_requirement",
    "CalibrationImpossible",
    "CorrectedPolicy",
    "CorrectionFactor",
    "RegressionPointPolicy",
    "calibrate_tau",
    "corrected_policy",
    "regression_point_policy",
]
