"""Planar robot localization with online fuzzy tuning of EKF noise covariances."""

__version__ = "0.1.0"

from .adaptation import (
    AdaptationConfig,
    CovarianceAdapter,
    DomState,
    ResidualWindow,
    compute_dom,
    estimate_actual_cov,
)
from .anfis import AnfisNet, MembershipFn, RuleBase, build_rule_base, mf_eval
from .ekf import CovPair, GaussianState, InnovationRecord
from .errors import FuzzylocError
from .metrics import (
    EnsembleReport,
    average_nees,
    build_report,
    chi2_band,
    chi2_ppf,
    in_band_fraction,
    nees,
    rmse,
)
from .models import (
    ControlInput,
    Landmark,
    LandmarkMap,
    Measurement,
    NoiseSpec,
    Pose,
    wrap_angle,
)
from .simulator import (
    VARIANTS,
    RunLog,
    Scenario,
    default_scenario,
    load_scenario,
    run_monte_carlo,
    run_once,
    save_scenario,
)

__all__ = [
    "AdaptationConfig",
    "AnfisNet",
    "ControlInput",
    "CovPair",
    "CovarianceAdapter",
    "DomState",
    "EnsembleReport",
    "FuzzylocError",
    "GaussianState",
    "InnovationRecord",
    "Landmark",
    "LandmarkMap",
    "Measurement",
    "MembershipFn",
    "NoiseSpec",
    "Pose",
    "ResidualWindow",
    "RuleBase",
    "RunLog",
    "Scenario",
    "VARIANTS",
    "average_nees",
    "build_report",
    "build_rule_base",
    "chi2_band",
    "chi2_ppf",
    "compute_dom",
    "default_scenario",
    "estimate_actual_cov",
    "in_band_fraction",
    "load_scenario",
    "mf_eval",
    "nees",
    "rmse",
    "run_monte_carlo",
    "run_once",
    "save_scenario",
    "wrap_angle",
    "__version__",
]
