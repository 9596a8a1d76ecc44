"""Second-order risk correction for submodel focus estimators.

With E Lambda_{n,S} = B1 + B2 / sqrt(n) + ... and Var Lambda_{n,S} = V1 + ...,
the risk expands as

    risk_n(S, delta) = B1^2 + V1 + 2 B1 B2 / sqrt(n) + o(1 / sqrt(n)),

with

    B2 = (dmu/dphi_S)' m_S(delta) + 1/2 Tr(mu11_S J_S^{-1}) - 1/2 delta' mu22 delta.

Only evaluation at a given (S, delta) is provided. The bias coefficient
m_S(delta) of the S-model estimator is injected by the caller; it is zero
for least-squares fits in the linear model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple

import numpy as np

from ._linalg import is_spd
from .design import FocusSpec, Subset
from .errors import NumericalError, ValidationError
from .limit import LimitSpec, error_moments


@dataclass(frozen=True)
class FocusDerivatives:
    """Focus derivatives at the narrow point, for one subset S."""

    dmu_dphi_S: np.ndarray
    mu11_S: np.ndarray
    mu22: np.ndarray
    J_S: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.dmu_dphi_S, dtype=float).reshape(-1)
        m11 = np.atleast_2d(np.asarray(self.mu11_S, dtype=float))
        m22 = np.atleast_2d(np.asarray(self.mu22, dtype=float))
        J = np.atleast_2d(np.asarray(self.J_S, dtype=float))
        k = g.size
        if m11.shape != (k, k) or J.shape != (k, k):
            raise ValidationError(f"mu11_S and J_S must be {k}x{k}")
        if m22.shape[0] != m22.shape[1]:
            raise ValidationError("mu22 must be square")
        for name, A in (("mu11_S", m11), ("mu22", m22), ("J_S", J)):
            if not np.allclose(A, A.T, atol=1e-10):
                raise ValidationError(f"{name} must be symmetric")
        if not is_spd(J):
            raise ValidationError("J_S must be positive definite")
        object.__setattr__(self, "dmu_dphi_S", g)
        object.__setattr__(self, "mu11_S", m11)
        object.__setattr__(self, "mu22", m22)
        object.__setattr__(self, "J_S", J)

    def to_dict(self) -> dict:
        return {"dmu_dphi_S": self.dmu_dphi_S.tolist(), "mu11_S": self.mu11_S.tolist(),
                "mu22": self.mu22.tolist(), "J_S": self.J_S.tolist()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FocusDerivatives":
        return cls(*(np.asarray(doc[k], dtype=float) for k in ("dmu_dphi_S", "mu11_S", "mu22", "J_S")))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FocusDerivatives":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class BiasModel:
    """Supplies m_S(delta), the 1/sqrt(n) mean coefficient of the S-model estimator."""

    m_S: Callable[[Subset, np.ndarray], np.ndarray] | None = None
    provenance: str = "zero"

    def __post_init__(self) -> None:
        if self.provenance not in ("zero", "user-supplied"):
            raise ValidationError("provenance must be 'zero' or 'user-supplied'")
        if self.provenance == "user-supplied" and self.m_S is None:
            raise ValidationError("user-supplied bias model needs m_S")

    @classmethod
    def zero(cls) -> "BiasModel":
        return cls()

    @classmethod
    def user(cls, m_S: Callable[[Subset, np.ndarray], np.ndarray]) -> "BiasModel":
        return cls(m_S, "user-supplied")

    def evaluate(self, S: Subset, delta: np.ndarray, dim: int) -> np.ndarray:
        if self.provenance == "zero":
            return np.zeros(dim)
        m = np.asarray(self.m_S(S, delta), dtype=float).reshape(-1)  # type: ignore[misc]
        if m.shape != (dim,):
            raise ValidationError(f"m_S returned length {m.size}, expected {dim}")
        if not np.all(np.isfinite(m)):
            raise NumericalError("m_S returned non-finite values")
        return m


class CorrectedRisk(NamedTuple):
    value: float
    leading: float
    correction: float


@dataclass(frozen=True)
class RiskExpansion:
    B1: float
    V1: float
    B2: float = 0.0

    @property
    def leading(self) -> float:
        return self.B1**2 + self.V1

    def correction(self, n: float) -> float:
        return 2.0 * self.B1 * self.B2 / math.sqrt(n)

    def corrected(self, n: float) -> float:
        return self.leading + self.correction(n)


def b1_v1_from_limit(spec: LimitSpec, S: Subset, focus: FocusSpec) -> tuple[float, float]:
    """First-order bias and variance of sqrt(n)(mu_S - mu_true) for a linear focus."""
    if focus.kind == "custom" and (focus.x0 is None or focus.u0 is None):
        raise ValidationError("b1_v1_from_limit needs the focus gradients, not only omega")
    z = focus.loading(spec.p, spec.q)
    mean, cov = error_moments(spec, S)
    return float(z @ mean), float(z @ cov @ z)


def b2_term(fd: FocusDerivatives, bm: BiasModel, S: Subset, delta) -> float:
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if fd.mu22.shape != (delta.size, delta.size):
        raise ValidationError(f"mu22 is {fd.mu22.shape}, delta has length {delta.size}")
    m = bm.evaluate(S, delta, fd.dmu_dphi_S.size)
    return (float(fd.dmu_dphi_S @ m)
            + 0.5 * float(np.trace(fd.mu11_S @ np.linalg.inv(fd.J_S)))
            - 0.5 * float(delta @ fd.mu22 @ delta))


def corrected_risk(exp: RiskExpansion, n: float) -> CorrectedRisk:
    if n < 1:
        raise ValidationError("n must be >= 1")
    c = exp.correction(n)
    return CorrectedRisk(exp.leading + c, exp.leading, c)


# ---------------------------------------------------------------------------
# Numerical derivatives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NumericDerivatives:
    """Gradient and Hessian of mu(theta, gamma) in the stacked (theta, gamma) coordinates."""

    gradient: np.ndarray
    hessian: np.ndarray
    p: int
    q: int

    @property
    def mu22(self) -> np.ndarray:
        return self.hessian[self.p :, self.p :]

    def blocks(self, S: Subset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(dmu/dphi_S, mu11_S, mu22) for the S-model parameters (theta, gamma_S)."""
        cols = np.concatenate([np.arange(self.p), self.p + S.check(self.q).zero_based()]).astype(int)
        return self.gradient[cols], self.hessian[np.ix_(cols, cols)], self.mu22


def _exact_steps(x: np.ndarray, h: float) -> np.ndarray:
    s = h * np.maximum(1.0, np.abs(x))
    return (x + s) - x


def finite_difference_derivatives(
    mu: Callable[[np.ndarray, np.ndarray], float],
    theta,
    gamma,
    h: float = 1e-4,
) -> NumericDerivatives:
    """Central-difference derivatives with one Richardson extrapolation step.

    Gradient steps are ``h`` relative to the coordinate size; Hessian steps
    are ``sqrt(h)`` relative, which keeps rounding error small after the
    extrapolation removes the leading truncation term.
    """
    if not h > 0:
        raise ValidationError("step h must be positive")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    p, q = theta.size, gamma.size
    x0 = np.concatenate([theta, gamma])
    d = x0.size

    def f(x: np.ndarray) -> float:
        try:
            v = float(mu(x[:p], x[p:]))
        except Exception as e:  # noqa: BLE001 - user callable
            raise NumericalError(f"focus evaluation failed at {x}: {e}") from e
        if not math.isfinite(v):
            raise NumericalError(f"focus is not finite at {x}")
        return v

    f0 = f(x0)
    eye = np.eye(d)

    def grad(step: np.ndarray) -> np.ndarray:
        return np.array([(f(x0 + step[i] * eye[i]) - f(x0 - step[i] * eye[i])) / (2 * step[i])
                         for i in range(d)])

    def hess(step: np.ndarray) -> np.ndarray:
        H = np.empty((d, d))
        for i in range(d):
            ei = step[i] * eye[i]
            H[i, i] = (f(x0 + ei) - 2 * f0 + f(x0 - ei)) / step[i] ** 2
            for j in range(i):
                ej = step[j] * eye[j]
                H[i, j] = H[j, i] = (f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej)
                                     + f(x0 - ei - ej)) / (4 * step[i] * step[j])
        return H

    sg = _exact_steps(x0, h)
    g = (4 * grad(sg / 2) - grad(sg)) / 3
    sh = _exact_steps(x0, math.sqrt(h))
    H = (4 * hess(sh / 2) - hess(sh)) / 3
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise NumericalError("non-finite finite differences")
    return NumericDerivatives(g, 0.5 * (H + H.T), p, q)


def focus_derivatives(nd: NumericDerivatives, S: Subset, J_S) -> FocusDerivatives:
    g, m11, m22 = nd.blocks(S)
    return FocusDerivatives(g, m11, m22, J_S)
