"""Subset selection scores computed from fitted quantities.

All scores are on the "n times risk" scale of the response squared.
``risk_estimate`` is the unbiased estimator of the limiting average
prediction risk, ``ave_fic`` differs from it by the constant
``(q - p) * sigma2`` and so ranks subsets identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats

from ._linalg import check_full_rank
from .design import (
    Dataset,
    FocusSpec,
    MomentMatrices,
    Subset,
    SubsetFit,
    compute_moments,
    fit_all,
    focus_omega,
    subset_blocks,
)
from .errors import NumericalError, ValidationError

NEGATIVE_RISK = "negative_risk_estimate"


@dataclass(frozen=True)
class SubsetScore:
    S: Subset
    risk_hat: float
    ave_fic: float
    fic: float | None = None
    fic_star: float | None = None
    cost_adjusted: float | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "subset": self.S.to_list(),
            "risk_hat": self.risk_hat,
            "ave_fic": self.ave_fic,
            "fic": self.fic,
            "fic_star": self.fic_star,
            "cost_adjusted": self.cost_adjusted,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class CostModel:
    """Cost ``k(S)`` of observing the regressors in ``S``, traded off by ``alpha``."""

    alpha: float = 0.0
    k: Callable[[Subset], float] = len
    monotone: bool = True

    def __post_init__(self) -> None:
        if not self.alpha >= 0:
            raise ValidationError("cost weight alpha must be >= 0")

    @classmethod
    def per_column(cls, alpha: float, costs: Sequence[float]) -> "CostModel":
        """Additive costs, one per uncertain column."""
        c = np.asarray(costs, dtype=float)
        if np.any(c < 0):
            raise ValidationError("column costs must be nonnegative")
        return cls(alpha=alpha, k=lambda S: float(c[S.zero_based()].sum()))

    @classmethod
    def table(cls, alpha: float, costs: Mapping[Subset, float], monotone: bool = False) -> "CostModel":
        table = dict(costs)

        def k(S: Subset) -> float:
            try:
                return float(table[S])
            except KeyError:
                raise ValidationError(f"no cost declared for subset {S}") from None

        return cls(alpha=alpha, k=k, monotone=monotone)


def _require_unweighted(m: MomentMatrices) -> None:
    if m.weighted:
        raise ValidationError(
            "risk estimation is only available for unit weights; recompute moments with use_weights=False"
        )


def _quad(m: MomentMatrices, H: np.ndarray, v: np.ndarray) -> float:
    a = m.L_inv_sqrt @ v
    return float(a @ H @ a)


def risk_estimate(fit: SubsetFit, m: MomentMatrices, S: Subset | None = None) -> float:
    """Unbiased estimate of n times the limiting average prediction risk of ``S``.

    (p - q + 2|S|) sigma2 + D' L^{-1} D - D' L^{-1/2} H_S L^{-1/2} D
    """
    _require_unweighted(m)
    S = fit.S if S is None else S
    _, H = subset_blocks(m, S)
    D = fit.D_n
    return ((m.p - m.q + 2 * len(S)) * fit.sigma2_full + float(D @ m.L_inv @ D)
            - _quad(m, H, D))


def ave_fic(fit: SubsetFit, m: MomentMatrices, S: Subset | None = None, n: int | None = None) -> float:
    """sigma2 * 2|S| + n phi' (I - H_S) phi, with phi = L^{-1/2} (gamma_full - gamma0)."""
    _require_unweighted(m)
    S = fit.S if S is None else S
    n = fit.n if n is None else n
    _, H = subset_blocks(m, S)
    phi = fit.phi_hat
    return 2 * len(S) * fit.sigma2_full + n * float(phi @ phi - phi @ H @ phi)


def K_hat(fit: SubsetFit, m: MomentMatrices) -> np.ndarray:
    """Estimated limit covariance of D_n in the linear model, sigma2 * L_n."""
    return fit.sigma2_full * m.L


def fic_score(fit: SubsetFit, m: MomentMatrices, omega: np.ndarray, S: Subset | None = None) -> float:
    """Focused criterion for the linear focus with vector ``omega``.

    (omega'(I - G_S) D)^2 + 2 omega' pi_S' K_S pi_S omega, where
    K_S = (pi_S K^{-1} pi_S')^{-1} and G_S = pi_S' K_S pi_S K^{-1}.
    Estimates n times the mean squared error of the S-estimator up to a
    subset-free constant.
    """
    S = fit.S if S is None else S
    omega = np.asarray(omega, dtype=float)
    q = m.q
    D = fit.D_n
    if len(S) == 0:
        return float(omega @ D) ** 2
    pi = S.projection(q)
    K_inv = m.L_inv / fit.sigma2_full
    K_S = np.linalg.inv(pi @ K_inv @ pi.T)
    PKP = pi.T @ K_S @ pi
    G = PKP @ K_inv
    bias = float(omega @ (D - G @ D))
    return bias**2 + 2 * float(omega @ PKP @ omega)


def fic_star(
    raw_fic: float | None,
    omega_hat: np.ndarray,
    K_hat: np.ndarray,
    mode: str = "general",
    fit: SubsetFit | None = None,
) -> float:
    """Scale-free focused score: the raw score divided by omega' K omega.

    ``mode="full"`` returns 2 and ``mode="narrow"`` returns
    ``n {omega'(gamma_full - gamma0)}^2 / omega' K omega``.
    """
    omega_hat = np.asarray(omega_hat, dtype=float)
    denom = float(omega_hat @ K_hat @ omega_hat)
    if not denom > 0:
        raise NumericalError("degenerate focus: omega' K omega <= 0")
    if mode == "full":
        return 2.0
    if mode == "narrow":
        if fit is None:
            raise ValidationError("narrow mode needs the full-model fit")
        return float(omega_hat @ fit.D_n) ** 2 / denom
    if mode == "general":
        if raw_fic is None:
            raise ValidationError("general mode needs a raw score")
        return float(raw_fic) / denom
    raise ValidationError(f"unknown fic_star mode {mode!r}")


def cost_adjusted(score: float, cm: CostModel, S: Subset) -> float:
    if not math.isfinite(score):
        raise ValidationError("score must be finite")
    k = float(cm.k(S))
    if k < 0:
        raise ValidationError(f"negative cost k({S}) = {k}")
    return score + cm.alpha * k


class GofResult(NamedTuple):
    statistic: float
    dof: int
    pvalue: float


def gof_statistic(fit: SubsetFit, K_hat: np.ndarray, n: int | None = None) -> GofResult:
    """n (gamma_full - gamma0)' K^{-1} (gamma_full - gamma0), limiting chi2_q(delta' K^{-1} delta)."""
    q = fit.q
    if q == 0:
        return GofResult(0.0, 0, 1.0)
    check_full_rank(K_hat, "K_hat")
    n = fit.n if n is None else n
    g = fit.D_n / math.sqrt(fit.n)
    stat = n * float(g @ np.linalg.solve(K_hat, g))
    return GofResult(stat, q, float(stats.chi2.sf(stat, q)))


# ---------------------------------------------------------------------------
# Scoring a family and ranking
# ---------------------------------------------------------------------------

RANK_KEYS = ("risk_hat", "ave_fic", "fic", "fic_star", "cost_adjusted")


def score_subsets(
    d: Dataset,
    subsets: Iterable[Subset],
    focus: FocusSpec | None = None,
    cost: CostModel | None = None,
    cost_on: str = "risk_hat",
) -> list[SubsetScore]:
    """Fit every subset and compute all available scores."""
    subsets = list(subsets)
    m = compute_moments(d)
    fits = fit_all(d, subsets, m)
    omega = K = None
    if focus is not None and d.q > 0:
        omega = focus_omega(focus, m)
        K = K_hat(fits[0], m)
    out = []
    for f in fits:
        r = risk_estimate(f, m)
        a = ave_fic(f, m)
        fic = fstar = None
        if omega is not None:
            fic = fic_score(f, m, omega)
            fstar = fic_star(fic, omega, K)
        flags = (NEGATIVE_RISK,) if r < 0 else ()
        s = SubsetScore(f.S, r, a, fic, fstar, None, flags)
        if cost is not None:
            base = getattr(s, cost_on)
            if base is None:
                raise ValidationError(f"cannot cost-adjust missing score {cost_on!r}")
            s = replace(s, cost_adjusted=cost_adjusted(base, cost, f.S))
        out.append(s)
    return out


def rank_and_shortlist(
    scores: Sequence[SubsetScore],
    m: int = 10,
    by: str = "risk_hat",
    family: Iterable[Subset] | None = None,
) -> list[SubsetScore]:
    """Sort ascending by ``by``; ties go to the smaller, then lexicographically first, subset."""
    if by not in RANK_KEYS:
        raise ValidationError(f"unknown ranking key {by!r}")
    if m < 1:
        raise ValidationError("shortlist size must be >= 1")
    pool = list(scores)
    if family is not None:
        keep = set(family)
        pool = [s for s in pool if s.S in keep]
    if not pool:
        raise ValidationError("no scores to rank")
    if any(getattr(s, by) is None for s in pool):
        raise ValidationError(f"score {by!r} not available for every subset")
    pool.sort(key=lambda s: (getattr(s, by), *s.S.sort_key()))
    return pool[:m]
