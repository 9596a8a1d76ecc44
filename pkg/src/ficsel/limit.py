"""The local-asymptotics limit experiment for the linear model.

With gamma = gamma0 + delta / sqrt(n) and Sigma_n -> Sigma, the S-submodel
estimator satisfies

    sqrt(n) (beta_S - beta, gamma_S) -> (C_S, D_S)
        = Sigma_S^{-1} (Sigma_01 delta + M, pi_S Sigma_11 delta + N_S),

with (M, N) ~ N(0, sigma^2 Sigma). Every selection or averaging scheme is
then a function of the single observation D = D_full ~ N_q(delta, K),
K = sigma^2 L. This module evaluates those laws, their risks (closed form
where one exists, Monte Carlo otherwise), and a few derived quantities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from ._linalg import check_full_rank, is_spd, spd_inv, sym_inv_sqrt, symmetrize
from ._rng import run_blocks
from .design import FocusSpec, Subset, omega_from_blocks, schur_L, subset_projector
from .errors import NumericalError, ValidationError


@dataclass(frozen=True)
class LimitSpec:
    """Limit experiment ``(p, q, sigma, Sigma, Omega, delta)``.

    ``Omega`` defaults to ``Sigma`` (unit prediction weights).
    """

    p: int
    q: int
    sigma: float
    Sigma: np.ndarray
    delta: np.ndarray
    Omega: np.ndarray | None = None
    L: np.ndarray = field(init=False, repr=False)
    L_inv: np.ndarray = field(init=False, repr=False)
    L_inv_sqrt: np.ndarray = field(init=False, repr=False)
    Sigma_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        d = self.p + self.q
        Sigma = np.asarray(self.Sigma, dtype=float)
        delta = np.asarray(self.delta, dtype=float).reshape(-1)
        Omega = Sigma if self.Omega is None else np.asarray(self.Omega, dtype=float)
        if self.p < 0 or self.q < 0:
            raise ValidationError("dimensions must be nonnegative")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if Sigma.shape != (d, d) or Omega.shape != (d, d):
            raise ValidationError(f"Sigma and Omega must be {d}x{d}")
        if delta.shape != (self.q,):
            raise ValidationError(f"delta must have length {self.q}")
        if not is_spd(Sigma):
            raise ValidationError("Sigma must be symmetric positive definite")
        if not np.allclose(Omega, Omega.T, atol=1e-12) or (d and np.linalg.eigvalsh(Omega)[0] < -1e-10):
            raise ValidationError("Omega must be symmetric positive semidefinite")
        check_full_rank(Sigma, "Sigma")
        L = schur_L(Sigma, self.p)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "Omega", Omega)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "L_inv", spd_inv(L, "L") if self.q else np.zeros((0, 0)))
        object.__setattr__(self, "L_inv_sqrt", sym_inv_sqrt(L))
        object.__setattr__(self, "Sigma_inv", spd_inv(Sigma, "Sigma"))

    @property
    def K(self) -> np.ndarray:
        return self.sigma**2 * self.L

    def with_delta(self, delta) -> "LimitSpec":
        return LimitSpec(self.p, self.q, self.sigma, self.Sigma, np.asarray(delta, dtype=float),
                         None if self.Omega is self.Sigma else self.Omega)

    def projector(self, S: Subset) -> tuple[np.ndarray, np.ndarray]:
        return subset_projector(self.L, S, self.L_inv, self.L_inv_sqrt)

    def omega(self, focus: FocusSpec) -> np.ndarray:
        """Focus vector Sigma_10 Sigma_00^{-1} x0 - u0 (or the custom omega)."""
        if focus.kind == "custom" and focus.omega is not None:
            return focus.omega.copy()
        x0, u0 = focus.gradients(self.p, self.q)
        p = self.p
        return omega_from_blocks(self.Sigma[:p, :p], self.Sigma[p:, :p], x0, u0)

    def to_dict(self) -> dict:
        out = {"p": self.p, "q": self.q, "sigma": float(self.sigma),
               "Sigma": self.Sigma.tolist(), "delta": self.delta.tolist()}
        if self.Omega is not self.Sigma:
            out["Omega"] = self.Omega.tolist()
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LimitSpec":
        allowed = {"p", "q", "sigma", "Sigma", "Omega", "delta"}
        extra = set(doc) - allowed
        if extra:
            raise ValidationError(f"unknown LimitSpec keys: {sorted(extra)}")
        try:
            return cls(int(doc["p"]), int(doc["q"]), float(doc["sigma"]),
                       np.asarray(doc["Sigma"], dtype=float), np.asarray(doc["delta"], dtype=float),
                       None if doc.get("Omega") is None else np.asarray(doc["Omega"], dtype=float))
        except KeyError as e:
            raise ValidationError(f"LimitSpec missing key {e.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LimitSpec":
        return cls.from_dict(json.loads(text))


def _cols(spec: LimitSpec, S: Subset) -> np.ndarray:
    """Positions of (beta, gamma_S) inside the stacked (beta, gamma) vector."""
    return np.concatenate([np.arange(spec.p), spec.p + S.check(spec.q).zero_based()]).astype(int)


# ---------------------------------------------------------------------------
# Submodel limit laws and closed-form risks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubmodelLimitLaw:
    """Gaussian law of (C_S, D_S); ``tail`` is the frozen block -delta_{S^c}."""

    S: Subset
    mean: np.ndarray
    cov: np.ndarray
    tail: np.ndarray


def submodel_limit_law(spec: LimitSpec, S: Subset) -> SubmodelLimitLaw:
    cols = _cols(spec, S)
    Sigma_S = spec.Sigma[np.ix_(cols, cols)]
    check_full_rank(Sigma_S, f"Sigma_S for S={S}")
    Sigma_S_inv = np.linalg.inv(Sigma_S)
    shift = (spec.Sigma @ np.concatenate([np.zeros(spec.p), spec.delta]))[cols]
    mean = Sigma_S_inv @ shift
    cov = spec.sigma**2 * symmetrize(Sigma_S_inv)
    return SubmodelLimitLaw(S, mean, cov, -spec.delta[~S.mask(spec.q)])


def error_moments(spec: LimitSpec, S: Subset) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of (C_S, D_S - delta_S, -delta_{S^c}) in (beta, gamma) coordinates."""
    law = submodel_limit_law(spec, S)
    cols = _cols(spec, S)
    d = spec.p + spec.q
    target = np.concatenate([np.zeros(spec.p), spec.delta])
    mean = -target.copy()
    mean[cols] = law.mean - target[cols]
    cov = np.zeros((d, d))
    cov[np.ix_(cols, cols)] = law.cov
    return mean, cov


def limit_risk_closed_form(spec: LimitSpec, S: Subset, Omega: np.ndarray | None = None) -> float:
    """E[v' Omega v] = tr(Omega Cov v) + E[v]' Omega E[v] for the stacked limit error v."""
    Omega = spec.Omega if Omega is None else np.asarray(Omega, dtype=float)
    d = spec.p + spec.q
    if Omega.shape != (d, d):
        raise ValidationError(f"Omega must be {d}x{d}, got {Omega.shape}")
    mean, cov = error_moments(spec, S)
    return float(np.trace(Omega @ cov) + mean @ Omega @ mean)


def limit_risk_unit_weights(spec: LimitSpec, S: Subset) -> float:
    """(p + |S|) sigma^2 + delta' L^{-1/2} (I - H_S) L^{-1/2} delta (valid for Omega = Sigma)."""
    _, H = spec.projector(S)
    a = spec.L_inv_sqrt @ spec.delta
    return (spec.p + len(S)) * spec.sigma**2 + float(a @ a - a @ H @ a)


# ---------------------------------------------------------------------------
# Joint sampling of all submodel limit errors
# ---------------------------------------------------------------------------


class _SubmodelSampler:
    """Maps draws of (M, N) to D = D_full and to each submodel's limit error."""

    def __init__(self, spec: LimitSpec, subsets: Iterable[Subset]):
        self.spec = spec
        self.chol = np.linalg.cholesky(spec.Sigma) * spec.sigma
        self.target = np.concatenate([np.zeros(spec.p), spec.delta])
        self.shift = spec.Sigma @ self.target
        self._maps: dict[Subset, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        for S in subsets:
            cols = _cols(spec, S)
            inv = np.linalg.inv(spec.Sigma[np.ix_(cols, cols)])
            self._maps[S] = (cols, inv, self.shift[cols])

    def draw_MN(self, rng: np.random.Generator, size: int) -> np.ndarray:
        d = self.spec.p + self.spec.q
        return rng.standard_normal((size, d)) @ self.chol.T

    def D(self, MN: np.ndarray) -> np.ndarray:
        p = self.spec.p
        return self.spec.delta + (MN @ self.spec.Sigma_inv)[:, p:]

    def errors(self, S: Subset, MN: np.ndarray) -> np.ndarray:
        cols, inv, shift = self._maps[S]
        v = np.broadcast_to(-self.target, MN.shape).copy()
        v[:, cols] = (MN[:, cols] + shift) @ inv - self.target[cols]
        return v


class MCEstimate(NamedTuple):
    estimate: float
    se: float
    reps: int
    seed: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "se": self.se, "reps": self.reps, "seed": self.seed}


def limit_risk_mc_oracle(spec: LimitSpec, S: Subset, R: int = 1_000_000, seed: int = 0,
                         Omega: np.ndarray | None = None, threads: int = 1) -> MCEstimate:
    """Monte Carlo of E[v' Omega v] drawn through the (M, N) representation."""
    Omega = spec.Omega if Omega is None else np.asarray(Omega, dtype=float)
    sampler = _SubmodelSampler(spec, [S])

    def block(rng, size):
        v = sampler.errors(S, sampler.draw_MN(rng, size))
        return np.einsum("ij,jk,ik->i", v, Omega, v)

    vals = np.concatenate(run_blocks(block, R, seed, stream=11, threads=threads))
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(R)), R, seed)


# ---------------------------------------------------------------------------
# Weight schemes
# ---------------------------------------------------------------------------

Criterion = Callable[[np.ndarray, Subset], np.ndarray]


@dataclass(frozen=True)
class WeightScheme:
    """Data-dependent weights c(S | D) over a support of subsets.

    ``weights_fn`` maps an (R, q) batch of D values to an (R, len(support))
    array of weights. ``kind`` is ``"single"`` (0/1 weights, a post-selection
    estimator), ``"fixed"`` or ``"smooth"``.
    """

    kind: str
    support: tuple[Subset, ...]
    weights_fn: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    nonnegative: bool = True

    def weights(self, D: np.ndarray) -> np.ndarray:
        D = np.atleast_2d(np.asarray(D, dtype=float))
        try:
            W = np.asarray(self.weights_fn(D), dtype=float)
        except Exception as e:  # noqa: BLE001 - user callables
            raise NumericalError(f"weight evaluation failed for scheme {self.name!r}: {e}") from e
        if W.shape != (D.shape[0], len(self.support)):
            raise NumericalError(f"scheme {self.name!r} returned weights of shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise NumericalError(f"scheme {self.name!r} returned non-finite weights")
        if np.max(np.abs(W.sum(axis=1) - 1.0), initial=0.0) > 1e-10:
            raise NumericalError(f"weights of scheme {self.name!r} do not sum to 1")
        if self.nonnegative and np.any(W < 0):
            raise NumericalError(f"scheme {self.name!r} returned negative weights")
        return W

    @classmethod
    def always(cls, S: Subset, name: str | None = None) -> "WeightScheme":
        return cls("single", (S,), lambda D: np.ones((D.shape[0], 1)), name or f"always{S}")

    @classmethod
    def fixed(cls, support: Sequence[Subset], weights: Sequence[float], name: str = "fixed") -> "WeightScheme":
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(support),):
            raise ValidationError("one weight per support subset required")
        if abs(w.sum() - 1.0) > 1e-10:
            raise ValidationError("fixed weights must sum to 1")
        return cls("fixed", tuple(support), lambda D: np.broadcast_to(w, (D.shape[0], w.size)), name,
                   nonnegative=bool(np.all(w >= 0)))

    @classmethod
    def select(cls, support: Sequence[Subset], criterion: Criterion, name: str = "select") -> "WeightScheme":
        """Post-selection: all weight on the subset minimising ``criterion``.

        Ties go to the smaller, then lexicographically first, subset.
        """
        order = sorted(range(len(support)), key=lambda i: support[i].sort_key())
        ordered = tuple(support[i] for i in order)

        def fn(D):
            scores = np.column_stack([criterion(D, S) for S in ordered])
            pick = np.argmin(scores, axis=1)
            W = np.zeros(scores.shape)
            W[np.arange(D.shape[0]), pick] = 1.0
            return W

        return cls("single", ordered, fn, name)

    @classmethod
    def from_rule(cls, support: Sequence[Subset], rule: Callable[[np.ndarray], np.ndarray],
                  name: str = "rule") -> "WeightScheme":
        """Post-selection by an index-valued rule ``rule(D) -> positions in support``."""
        support = tuple(support)

        def fn(D):
            pick = np.asarray(rule(D), dtype=int)
            W = np.zeros((D.shape[0], len(support)))
            W[np.arange(D.shape[0]), pick] = 1.0
            return W

        return cls("single", support, fn, name)

    @classmethod
    def smooth(cls, support: Sequence[Subset], fn: Callable[[np.ndarray], np.ndarray],
               name: str = "smooth", nonnegative: bool = True) -> "WeightScheme":
        return cls("smooth", tuple(support), fn, name, nonnegative)

    @classmethod
    def exp_weights(cls, support: Sequence[Subset], criterion: Criterion, kappa: float = 0.5,
                    name: str = "smooth") -> "WeightScheme":
        """c(S | D) proportional to exp(-kappa * criterion(D, S))."""
        support = tuple(support)

        def fn(D):
            scores = np.column_stack([criterion(D, S) for S in support])
            scores = scores - scores.min(axis=1, keepdims=True)
            e = np.exp(-kappa * scores)
            return e / e.sum(axis=1, keepdims=True)

        return cls("smooth", support, fn, name)


# Limit-experiment versions of the selection criteria, vectorised over D.


def limit_ave_fic(spec: LimitSpec) -> Criterion:
    """2|S| sigma^2 + D' L^{-1/2} (I - H_S) L^{-1/2} D."""
    cache: dict[Subset, np.ndarray] = {}

    def crit(D: np.ndarray, S: Subset) -> np.ndarray:
        if S not in cache:
            cache[S] = spec.projector(S)[1]
        a = D @ spec.L_inv_sqrt
        return 2 * len(S) * spec.sigma**2 + np.einsum("ij,ij->i", a, a - a @ cache[S])

    return crit


def limit_aic(spec: LimitSpec) -> Criterion:
    """2|S| - D' L^{-1/2} H_S L^{-1/2} D / sigma^2 (AIC difference from the narrow model)."""
    cache: dict[Subset, np.ndarray] = {}

    def crit(D: np.ndarray, S: Subset) -> np.ndarray:
        if S not in cache:
            cache[S] = spec.projector(S)[1]
        a = D @ spec.L_inv_sqrt
        return 2 * len(S) - np.einsum("ij,ij->i", a, a @ cache[S]) / spec.sigma**2

    return crit


def limit_fic(spec: LimitSpec, omega: np.ndarray) -> Criterion:
    """(omega'(I - G_S) D)^2 + 2 omega' pi_S' K_S pi_S omega."""
    omega = np.asarray(omega, dtype=float)
    K_inv = spec.L_inv / spec.sigma**2
    cache: dict[Subset, tuple[np.ndarray, float]] = {}

    def parts(S: Subset):
        if S not in cache:
            if len(S) == 0:
                cache[S] = (omega.copy(), 0.0)
            else:
                pi = S.projection(spec.q)
                PKP = pi.T @ np.linalg.inv(pi @ K_inv @ pi.T) @ pi
                G = PKP @ K_inv
                cache[S] = (omega - G.T @ omega, 2 * float(omega @ PKP @ omega))
        return cache[S]

    def crit(D: np.ndarray, S: Subset) -> np.ndarray:
        a, var = parts(S)
        return (D @ a) ** 2 + var

    return crit


# ---------------------------------------------------------------------------
# Monte Carlo limit risk for arbitrary schemes
# ---------------------------------------------------------------------------

LOSSES = ("squared", "absolute")


def limit_losses(
    spec: LimitSpec,
    schemes: Mapping[str, WeightScheme],
    focus: FocusSpec | None = None,
    loss: str = "squared",
    R: int = 10_000,
    seed: int = 0,
    Omega: np.ndarray | None = None,
    threads: int = 1,
) -> dict[str, np.ndarray]:
    """Per-draw limit losses of several schemes under common random numbers.

    With a ``focus`` the loss is evaluated on z' v, the limit error of the
    averaged focus estimator; without one, on v' Omega v (design-averaged
    prediction error).
    """
    if loss not in LOSSES:
        raise ValidationError(f"unknown loss {loss!r}")
    if R < 1000:
        raise ValidationError("limit_risk_mc needs at least 1000 draws")
    if focus is None and loss == "absolute":
        raise ValidationError("absolute loss requires a scalar focus")
    Omega = spec.Omega if Omega is None else np.asarray(Omega, dtype=float)
    z = None if focus is None else focus.loading(spec.p, spec.q)
    support = sorted({S for sch in schemes.values() for S in sch.support}, key=Subset.sort_key)
    sampler = _SubmodelSampler(spec, support)
    names = list(schemes)

    def block(rng, size):
        MN = sampler.draw_MN(rng, size)
        D = sampler.D(MN)
        errs = {S: sampler.errors(S, MN) for S in support}
        out = np.empty((size, len(names)))
        for c, name in enumerate(names):
            sch = schemes[name]
            W = sch.weights(D)
            v = sum(W[:, [k]] * errs[S] for k, S in enumerate(sch.support))
            if z is not None:
                e = v @ z
                out[:, c] = e**2 if loss == "squared" else np.abs(e)
            else:
                out[:, c] = np.einsum("ij,jk,ik->i", v, Omega, v)
        return out

    vals = np.concatenate(run_blocks(block, R, seed, stream=13, threads=threads))
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite loss encountered")
    return {name: vals[:, c] for c, name in enumerate(names)}


def limit_risk_mc(
    spec: LimitSpec,
    scheme: WeightScheme,
    focus: FocusSpec | None = None,
    loss: str = "squared",
    R: int = 10_000,
    seed: int = 0,
    Omega: np.ndarray | None = None,
    threads: int = 1,
) -> MCEstimate:
    vals = limit_losses(spec, {"s": scheme}, focus, loss, R, seed, Omega, threads)["s"]
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(R)), R, seed)


def model_average_estimate(
    D: np.ndarray,
    scheme: WeightScheme,
    per_subset: Mapping[Subset, float],
    focus: FocusSpec | None = None,
    gamma0_j: float = 0.0,
) -> float:
    """sum_S c(S | D) * estimate_S.

    For a coefficient focus gamma_j, subsets without j estimate gamma_j by
    its baseline value, whatever ``per_subset`` says.
    """
    W = scheme.weights(np.asarray(D, dtype=float)[None, :])[0]
    total = 0.0
    for c, S in zip(W, scheme.support):
        if focus is not None and focus.kind == "gamma" and focus.j not in S:
            value = gamma0_j
        else:
            try:
                value = float(per_subset[S])
            except KeyError:
                raise ValidationError(f"no estimate supplied for subset {S}") from None
        total += c * value
    return total


# ---------------------------------------------------------------------------
# Tolerance regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToleranceSpec:
    omega: np.ndarray
    K: np.ndarray
    n: int

    def __post_init__(self) -> None:
        omega = np.asarray(self.omega, dtype=float).reshape(-1)
        K = np.asarray(self.K, dtype=float)
        if K.shape != (omega.size, omega.size) or not is_spd(K):
            raise ValidationError("K must be a q x q SPD matrix matching omega")
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "K", K)


class ToleranceResult(NamedTuple):
    inside: bool
    lhs: float
    rhs: float


def tolerance_check(t: ToleranceSpec, gamma_offsets, n: int | None = None) -> ToleranceResult:
    """Is sqrt(n) |omega'(gamma - gamma0)| <= (omega' K omega)^{1/2}?

    Inside this band the narrow model estimates the focus at least as well
    as the full model, to first order.
    """
    n = t.n if n is None else n
    g = np.asarray(gamma_offsets, dtype=float).reshape(-1)
    lhs = math.sqrt(n) * abs(float(t.omega @ g))
    rhs = math.sqrt(float(t.omega @ t.K @ t.omega))
    return ToleranceResult(lhs <= rhs, lhs, rhs)


def tolerance_ellipse_predicate(K: np.ndarray, gamma_offsets, n: int) -> bool:
    """(gamma - gamma0)' K^{-1} (gamma - gamma0) <= 1/n: narrow model wins for every focus."""
    K = np.asarray(K, dtype=float)
    if not is_spd(K):
        raise NumericalError("K must be symmetric positive definite")
    g = np.asarray(gamma_offsets, dtype=float).reshape(-1)
    return float(g @ np.linalg.solve(K, g)) <= 1.0 / n


# ---------------------------------------------------------------------------
# Exponential-within-Weibull quantile example
# ---------------------------------------------------------------------------

EULER_GAMMA = 0.5772157


@dataclass(frozen=True)
class WeibullQuantileExample:
    alpha: float
    theta: float = 1.0
    r: float = EULER_GAMMA

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not self.theta > 0:
            raise ValidationError("theta must be positive")

    @property
    def nu(self) -> float:
        return -math.log1p(-self.alpha)


def weibull_omega(ex: WeibullQuantileExample) -> float:
    """omega = (nu / theta) (log nu - (1 - r)) for the alpha-quantile nu^{1/gamma} / theta."""
    nu = ex.nu
    return nu / ex.theta * (math.log(nu) - (1.0 - ex.r))


def weibull_omega_root(r: float = EULER_GAMMA) -> float:
    """The quantile level at which omega vanishes: alpha = 1 - exp(-exp(1 - r))."""
    return -math.expm1(-math.exp(1.0 - r))


# ---------------------------------------------------------------------------
# Draws of D
# ---------------------------------------------------------------------------


def simulate_limit_D(delta, K, R: int, seed: int = 0, threads: int = 1) -> np.ndarray:
    """R draws of D ~ N_q(delta, K), reproducible for a given seed."""
    delta = np.asarray(delta, dtype=float).reshape(-1)
    K = np.asarray(K, dtype=float)
    if K.shape != (delta.size, delta.size) or not is_spd(K):
        raise NumericalError("K must be symmetric positive definite")
    chol = np.linalg.cholesky(K)

    def block(rng, size):
        return delta + rng.standard_normal((size, delta.size)) @ chol.T

    return np.concatenate(run_blocks(block, R, seed, stream=7, threads=threads))
