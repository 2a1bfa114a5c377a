"""Bounds on average treatment effects under bounded unobserved confounding."""

__version__ = "0.1.0"

from .bounds import (
    BoundEstimate,
    ReportRow,
    SensitivityReport,
    analyze,
    cate_bounds_at,
    confidence_interval,
    estimate_bound,
    gamma_sweep,
    normal_quantile,
    score_mu1_lower,
)
from .data_model import (
    AnalysisConfig,
    ConfigError,
    DataError,
    Dataset,
    FoldPlan,
    SieveSettings,
    load_csv,
    make_folds,
)
from .design_sensitivity import (
    AdversarialNullSampler,
    EmpiricalAlternative,
    GaussianAlternative,
    adversarial_null_sampler,
    gamma_design_empirical,
    gamma_design_gaussian,
    reject_null,
)
from .gamma_loss import (
    ThetaModel,
    fit_theta,
    loss_value,
    psi_tilde_value,
    psi_value,
    scalar_root,
    worst_case_weights,
)
from .nuisance import NuisanceSet, cross_fit, select_tuning
from .sieve import SieveBasis, default_size, design_matrix, eval_basis
from .simulation import MonteCarloSummary, SimConfig, generate_dataset, run_monte_carlo

__all__ = [name for name in dir() if not name.startswith("_")]
