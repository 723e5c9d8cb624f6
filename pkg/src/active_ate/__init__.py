"""Adaptive experimental design for treatment-effect estimation.

Simulation engine and estimator library for designs that jointly choose the
covariate sampling density and the treatment propensity to minimize the
asymptotic variance of ATE estimators, plus a Monte Carlo harness that
reproduces the reference simulation studies.
"""

from .design import (
    BoundReport,
    DesignProbabilities,
    bound_report,
    efficiency_bound,
    efficient_density_ratio,
    estimated_design,
    neyman_propensity,
    oracle_design,
    sample_size,
)
from .engine import (
    DesignKind,
    EngineConfig,
    History,
    assign_treatment,
    replay_design,
    run_trial,
)
from .estimators import (
    EstimateReport,
    ScoreRecord,
    aipw_estimate,
    aipwiw_estimate,
    aipwiw_score,
    difference_in_means,
)
from .harness import StudySpec, StudySummary, empirical_distribution, run_study
from .nuisance import NuisanceModel, OnlineNuisance, silverman_bandwidth, thre
from .sampler import RejectionCapExceeded, RejectionSampler, accept_decision
from .scenario import (
    CovariateLaw,
    OutcomeModel,
    Scenario,
    ScenarioError,
    build_paper_scenario,
    load_scenario,
    sample_covariate,
    sample_outcome,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "CovariateLaw", "DesignKind", "DesignProbabilities",
    "EngineConfig", "EstimateReport", "History", "NuisanceModel",
    "OnlineNuisance", "OutcomeModel", "RejectionCapExceeded",
    "RejectionSampler", "Scenario", "ScenarioError", "ScoreRecord",
    "StudySpec", "StudySummary", "accept_decision", "aipw_estimate",
    "aipwiw_estimate", "aipwiw_score", "assign_treatment",
    "bound_report", "build_paper_scenario", "difference_in_means",
    "efficiency_bound", "efficient_density_ratio", "empirical_distribution",
    "estimated_design", "load_scenario", "neyman_propensity", "oracle_design",
    "replay_design", "run_study", "run_trial", "sample_covariate",
    "sample_outcome", "sample_size", "save_scenario", "scenario_from_dict",
    "scenario_to_dict", "silverman_bandwidth", "thre",
]
