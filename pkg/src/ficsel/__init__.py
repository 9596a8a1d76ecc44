"""Focused model selection and frequentist model averaging for linear regression."""

__version__ = "0.1.0"

from .criteria import (
    CostModel,
    SubsetScore,
    ave_fic,
    cost_adjusted,
    fic_score,
    fic_star,
    gof_statistic,
    rank_and_shortlist,
    risk_estimate,
    score_subsets,
)
from .design import (
    Dataset,
    FocusSpec,
    MomentMatrices,
    Subset,
    SubsetFit,
    compute_moments,
    fit_subset,
    focus_omega,
    load_dataset,
    subset_blocks,
)
from .errors import NumericalError, RankDeficiencyError, ValidationError
from .limit import (
    LimitSpec,
    WeightScheme,
    limit_risk_closed_form,
    limit_risk_mc,
    simulate_limit_D,
    submodel_limit_law,
    tolerance_check,
    tolerance_ellipse_predicate,
    weibull_omega,
)
from .order import OrderSpec, estimate_order_backward, estimate_order_forward, limit_distribution
from .second_order import b1_v1_from_limit, b2_term, corrected_risk

__all__ = [
    "CostModel", "Dataset", "FocusSpec", "LimitSpec", "MomentMatrices", "NumericalError",
    "OrderSpec", "RankDeficiencyError", "Subset", "SubsetFit", "SubsetScore", "ValidationError",
    "WeightScheme", "ave_fic", "b1_v1_from_limit", "b2_term", "compute_moments", "corrected_risk",
    "cost_adjusted", "estimate_order_backward", "estimate_order_forward", "fic_score", "fic_star",
    "fit_subset", "focus_omega", "gof_statistic", "limit_distribution", "limit_risk_closed_form",
    "limit_risk_mc", "load_dataset", "rank_and_shortlist", "risk_estimate", "score_subsets",
    "simulate_limit_D", "submodel_limit_law", "subset_blocks", "tolerance_check",
    "tolerance_ellipse_predicate", "weibull_omega",
]
