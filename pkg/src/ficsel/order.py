"""Backward and forward order estimation for nested linear models.

The nested models use the first k of K ordered regressors. With
studentized full-model statistics z_1..z_K and acceptance intervals
J_k = (-c_k, c_k), c_k the upper alpha_k/2 normal quantile:

* backward: k_B = the largest k whose test rejects (0 if none does);
* forward: scan k = 1, 2, ... and stop at the first acceptance, returning
  the last rejected index (K if every test rejects).

Limit laws are evaluated in closed form when the limit statistics are
independent and by Monte Carlo otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from ._rng import run_blocks
from .design import FocusSpec, nested_subsets
from .errors import RankDeficiencyError, ValidationError
from .limit import LimitSpec, WeightScheme, limit_aic, limit_fic, limit_losses

REGIMES = ("fixed", "local")


def critical_values(alphas, K: int) -> np.ndarray:
    a = np.broadcast_to(np.asarray(alphas, dtype=float), (K,)).copy()
    if np.any((a <= 0) | (a >= 1)):
        raise ValidationError("test levels must lie in (0, 1)")
    return norm.isf(a / 2)


def backward_orders(Z: np.ndarray, crit: np.ndarray) -> np.ndarray:
    """Vectorised backward estimate for an (R, K) array of statistics."""
    rej = np.abs(Z) >= crit
    K = Z.shape[1]
    last = K - np.argmax(rej[:, ::-1], axis=1)
    return np.where(rej.any(axis=1), last, 0)


def forward_orders(Z: np.ndarray, crit: np.ndarray) -> np.ndarray:
    """Vectorised forward estimate for an (R, K) array of statistics."""
    acc = np.abs(Z) < crit
    return np.where(acc.any(axis=1), np.argmax(acc, axis=1), Z.shape[1])


def estimate_order_backward(z_stats: Sequence[float], alphas=0.05) -> int:
    z = np.asarray(z_stats, dtype=float).reshape(1, -1)
    return int(backward_orders(z, critical_values(alphas, z.shape[1]))[0])


def estimate_order_forward(z_stats: Sequence[float], alphas=0.05) -> int:
    z = np.asarray(z_stats, dtype=float).reshape(1, -1)
    return int(forward_orders(z, critical_values(alphas, z.shape[1]))[0])


@dataclass(frozen=True)
class OrderSpec:
    """Nested-model order problem.

    ``shifts[k-1]`` is delta_k / sigma_k; in the fixed regime the first
    ``k0`` entries are ``inf`` (coefficients of fixed nonzero size) and the
    rest are zero.
    """

    K: int
    k0: int
    shifts: np.ndarray
    corr: np.ndarray
    alphas: np.ndarray
    regime: str = "local"

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if not 0 <= self.k0 <= self.K:
            raise ValidationError("k0 must lie in 0..K")
        if self.regime not in REGIMES:
            raise ValidationError(f"regime must be one of {REGIMES}")
        shifts = np.asarray(self.shifts, dtype=float).reshape(-1)
        corr = np.asarray(self.corr, dtype=float)
        alphas = np.broadcast_to(np.asarray(self.alphas, dtype=float), (self.K,)).copy()
        if shifts.shape != (self.K,):
            raise ValidationError(f"shifts must have length K={self.K}")
        if corr.shape != (self.K, self.K) or not np.allclose(corr, corr.T, atol=1e-12):
            raise ValidationError("corr must be a symmetric K x K matrix")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ValidationError("corr must have unit diagonal")
        if np.linalg.eigvalsh(corr)[0] < -1e-10:
            raise ValidationError("corr must be positive semidefinite")
        if np.any((alphas <= 0) | (alphas >= 1)):
            raise ValidationError("test levels must lie in (0, 1)")
        if np.any(shifts[self.k0 :] != 0):
            raise ValidationError("shifts must vanish beyond k0")
        if np.any(np.isnan(shifts)):
            raise ValidationError("shifts must not be NaN")
        if self.regime == "local" and np.any(np.isinf(shifts)):
            raise ValidationError("infinite shift is infeasible in the local regime")
        if self.regime == "fixed" and not np.all(np.isposinf(shifts[: self.k0])):
            raise ValidationError("fixed regime needs +inf shifts for k <= k0")
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "corr", corr)
        object.__setattr__(self, "alphas", alphas)

    @classmethod
    def fixed(cls, K: int, k0: int, corr=None, alphas=0.05) -> "OrderSpec":
        shifts = np.concatenate([np.full(k0, np.inf), np.zeros(K - k0)])
        return cls(K, k0, shifts, np.eye(K) if corr is None else corr, alphas, "fixed")

    @classmethod
    def local(cls, K: int, k0: int, shifts, corr=None, alphas=0.05) -> "OrderSpec":
        s = np.zeros(K)
        s[: len(shifts)] = shifts
        return cls(K, k0, s, np.eye(K) if corr is None else corr, alphas, "local")

    @property
    def crit(self) -> np.ndarray:
        return critical_values(self.alphas, self.K)

    @property
    def independent(self) -> bool:
        return bool(np.array_equal(self.corr, np.eye(self.K)))

    def to_dict(self) -> dict:
        return {
            "K": self.K, "k0": self.k0,
            "shifts": ["inf" if math.isinf(s) else float(s) for s in self.shifts],
            "corr": self.corr.tolist(), "alphas": self.alphas.tolist(), "regime": self.regime,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "OrderSpec":
        allowed = {"K", "k0", "shifts", "corr", "alphas", "regime"}
        extra = set(doc) - allowed
        if extra:
            raise ValidationError(f"unknown OrderSpec keys: {sorted(extra)}")
        try:
            K = int(doc["K"])
            k0 = int(doc["k0"])
        except KeyError as e:
            raise ValidationError(f"OrderSpec missing key {e.args[0]!r}") from None
        regime = doc.get("regime", "local")
        default = [math.inf if regime == "fixed" and k < k0 else 0.0 for k in range(K)]
        shifts = [math.inf if s in ("inf", "+inf", "Infinity") else float(s) for s in doc.get("shifts", default)]
        return cls(K, k0, np.asarray(shifts), np.asarray(doc.get("corr", np.eye(K)), dtype=float),
                   np.asarray(doc.get("alphas", 0.05), dtype=float), regime)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "OrderSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class OrderDistribution:
    probs: np.ndarray
    se: np.ndarray
    regime: str
    which: str
    method: str
    reps: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        return {"which": self.which, "regime": self.regime, "method": self.method,
                "probs": self.probs.tolist(), "se": self.se.tolist(), "reps": self.reps, "seed": self.seed}


def _acceptance_probs(spec: OrderSpec) -> np.ndarray:
    """Pr{shift_k + Z_k in J_k} for each k; zero for infinite shifts."""
    c = spec.crit
    s = spec.shifts
    a = np.zeros(spec.K)
    finite = np.isfinite(s)
    a[finite] = norm.cdf(c[finite] - s[finite]) - norm.cdf(-c[finite] - s[finite])
    # Unshifted statistics accept with probability 1 - alpha by construction of c.
    null = s == 0
    a[null] = 1.0 - spec.alphas[null]
    return a


def _closed_form(spec: OrderSpec, which: str) -> np.ndarray:
    a = _acceptance_probs(spec)
    K = spec.K
    probs = np.zeros(K + 1)
    if which == "backward":
        for k in range(K + 1):
            tail = float(np.prod(a[k:]))
            probs[k] = tail if k == 0 else (1 - a[k - 1]) * tail
    else:
        for k in range(K + 1):
            head = float(np.prod(1 - a[:k]))
            probs[k] = head if k == K else head * a[k]
    return probs


def _corr_factor(corr: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(corr)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def limit_distribution(
    spec: OrderSpec,
    which: str = "backward",
    R: int = 100_000,
    seed: int = 0,
    method: str = "auto",
    threads: int = 1,
) -> OrderDistribution:
    """Limit law of the backward or forward order estimate on 0..K.

    ``method`` is ``"closed"`` (independent statistics only), ``"mc"`` or
    ``"auto"`` (closed form when ``corr`` is the identity).
    """
    if which not in ("backward", "forward"):
        raise ValidationError("which must be 'backward' or 'forward'")
    if method == "auto":
        method = "closed" if spec.independent else "mc"
    if method == "closed":
        if not spec.independent:
            raise ValidationError("closed form requires independent limit statistics")
        probs = _closed_form(spec, which)
        return OrderDistribution(probs, np.zeros_like(probs), spec.regime, which, "closed")
    if method != "mc":
        raise ValidationError(f"unknown method {method!r}")
    if not spec.independent and R < 10_000:
        raise ValidationError("Monte Carlo with correlated statistics needs R >= 10000")
    A = _corr_factor(spec.corr)
    crit = spec.crit
    shifts = spec.shifts
    inf = np.isinf(shifts)
    est = backward_orders if which == "backward" else forward_orders

    def block(rng, size):
        Z = rng.standard_normal((size, spec.K)) @ A.T
        W = Z + np.where(inf, 0.0, shifts)
        W[:, inf] = np.inf
        return np.bincount(est(W, crit), minlength=spec.K + 1)

    counts = np.sum(run_blocks(block, R, seed, stream=21, threads=threads), axis=0)
    probs = counts / R
    return OrderDistribution(probs, np.sqrt(probs * (1 - probs) / R), spec.regime, which, "mc", R, seed)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ---------------------------------------------------------------------------
# Finite-sample experiments
# ---------------------------------------------------------------------------


def nested_design(n: int, Q: np.ndarray, seed: int = 0) -> np.ndarray:
    """An n x K design with U'U / n = Q exactly."""
    K = Q.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(31,)))
    O, _ = np.linalg.qr(rng.standard_normal((n, K)))
    return math.sqrt(n) * O @ np.linalg.cholesky(Q).T


@dataclass(frozen=True)
class FiniteSampleResult:
    backward: OrderDistribution
    forward: OrderDistribution
    tv_backward: float
    tv_forward: float
    n: int

    def to_dict(self) -> dict:
        return {"n": self.n, "backward": self.backward.to_dict(), "forward": self.forward.to_dict(),
                "tv_backward": self.tv_backward, "tv_forward": self.tv_forward}


def finite_sample_distribution(
    spec: OrderSpec,
    n: int,
    R: int = 20_000,
    seed: int = 0,
    *,
    sigma: float = 1.0,
    design: np.ndarray | None = None,
    fixed_effect: float = 1.0,
    limit_R: int = 200_000,
    threads: int = 1,
) -> FiniteSampleResult:
    """Empirical law of both order estimates for y = sum_{k<=k0} beta_k u_k + noise.

    Without a ``design`` the regressors are built with Q = corr^{-1}, so the
    limit statistics have correlation ``corr``. Local-regime coefficients are
    beta_k = shift_k sigma_k / sqrt(n); fixed-regime ones are
    ``fixed_effect * sigma_k``.
    """
    K = spec.K
    if design is None:
        design = nested_design(n, np.linalg.inv(spec.corr), seed)
    U = np.asarray(design, dtype=float)
    if U.shape != (n, K):
        raise ValidationError(f"design must be {n} x {K}")
    if n <= K:
        raise ValidationError("need n > K")
    G = U.T @ U
    if np.linalg.cond(G) > 1e10:
        raise RankDeficiencyError("nested design is rank deficient")
    G_inv = np.linalg.inv(G)
    sigma_k = sigma * np.sqrt(n * np.diag(G_inv))
    beta = np.zeros(K)
    for k in range(spec.k0):
        s = spec.shifts[k]
        beta[k] = fixed_effect * sigma_k[k] if math.isinf(s) else s * sigma_k[k] / math.sqrt(n)
    crit = spec.crit
    sd_coef = np.sqrt(np.diag(G_inv))
    chunk = max(1, min(1024, 2_000_000 // n))

    def block(rng, size):
        out = np.zeros((2, K + 1), dtype=np.int64)
        for start in range(0, size, chunk):
            m = min(chunk, size - start)
            eps = sigma * rng.standard_normal((m, n))
            Ue = eps @ U
            bhat = beta + Ue @ G_inv
            rss = np.einsum("ij,ij->i", eps, eps) - np.einsum("ij,jk,ik->i", Ue, G_inv, Ue)
            s_hat = np.sqrt(rss / (n - K))
            Z = bhat / (s_hat[:, None] * sd_coef)
            out[0] += np.bincount(backward_orders(Z, crit), minlength=K + 1)
            out[1] += np.bincount(forward_orders(Z, crit), minlength=K + 1)
        return out

    counts = np.sum(run_blocks(block, R, seed, stream=23, threads=threads), axis=0)
    dists = []
    for row, which in enumerate(("backward", "forward")):
        p = counts[row] / R
        dists.append(OrderDistribution(p, np.sqrt(p * (1 - p) / R), spec.regime, which, "finite", R, seed))
    limit_method = "closed" if spec.independent else "mc"
    lb = limit_distribution(spec, "backward", limit_R, seed + 1, limit_method, threads)
    lf = limit_distribution(spec, "forward", limit_R, seed + 1, limit_method, threads)
    return FiniteSampleResult(dists[0], dists[1], total_variation(dists[0].probs, lb.probs),
                              total_variation(dists[1].probs, lf.probs), n)


# ---------------------------------------------------------------------------
# Backward / forward predictors as model-average estimators
# ---------------------------------------------------------------------------


def order_schemes(spec: LimitSpec, alphas=0.05, focus: FocusSpec | None = None) -> dict[str, WeightScheme]:
    """Selection schemes over the nested family, all functions of the limit D."""
    q = spec.q
    support = nested_subsets(q)
    crit = critical_values(alphas, q)
    scale = np.sqrt(np.diag(spec.K))
    schemes = {
        "backward": WeightScheme.from_rule(support, lambda D: backward_orders(D / scale, crit), "backward"),
        "forward": WeightScheme.from_rule(support, lambda D: forward_orders(D / scale, crit), "forward"),
        "aic": WeightScheme.select(support, limit_aic(spec), "aic"),
        "narrow": WeightScheme.always(support[0], "narrow"),
        "full": WeightScheme.always(support[-1], "full"),
    }
    if focus is not None:
        schemes["fic"] = WeightScheme.select(support, limit_fic(spec, spec.omega(focus)), "fic")
    return schemes


def predictor_risk_compare(
    spec: LimitSpec,
    focus: FocusSpec,
    deltas: Sequence[Sequence[float]],
    alphas=0.05,
    R: int = 20_000,
    seed: int = 0,
    threads: int = 1,
) -> list[dict]:
    """Limit risks of backward, forward, AIC, FIC, narrow and full predictors over a delta grid.

    Each row also carries the backward-minus-forward risk difference and
    its paired standard error; no overall verdict is drawn.
    """
    rows = []
    for i, delta in enumerate(deltas):
        sp = spec.with_delta(delta)
        schemes = order_schemes(sp, alphas, focus)
        losses = limit_losses(sp, schemes, focus, "squared", R, seed + i, threads=threads)
        row = {"delta": [float(x) for x in np.asarray(delta, dtype=float)]}
        for name, vals in losses.items():
            row[name] = {"risk": float(vals.mean()), "se": float(vals.std(ddof=1) / math.sqrt(R))}
        diff = losses["backward"] - losses["forward"]
        row["backward_minus_forward"] = {"risk": float(diff.mean()),
                                         "se": float(diff.std(ddof=1) / math.sqrt(R))}
        rows.append(row)
    return rows
