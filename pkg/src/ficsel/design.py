"""Regression data model, moment matrices, subsets and subset fits.

The linear model is

    y_i = x_i' beta + u_i' gamma + eps_i,

with ``x`` (p columns) protected and always in the model, and ``u``
(q columns) uncertain. A submodel is indexed by a subset ``S`` of the
uncertain columns; columns outside ``S`` are frozen at their baseline
value ``gamma0``.

Subset indices are 1-based throughout the public API, matching the
usual notation ``S`` as a subset of ``{1, ..., q}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._linalg import check_full_rank, spd_inv, sym_inv_sqrt, symmetrize
from .errors import ValidationError


# ---------------------------------------------------------------------------
# Subsets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Subset:
    """Canonical (sorted, duplicate-free) set of 1-based uncertain indices."""

    indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        idx = tuple(sorted({int(i) for i in self.indices}))
        if idx and idx[0] < 1:
            raise ValidationError(f"subset indices must be >= 1, got {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, *indices: int) -> "Subset":
        return cls(tuple(indices))

    @classmethod
    def full(cls, q: int) -> "Subset":
        return cls(tuple(range(1, q + 1)))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, j: object) -> bool:
        return j in self.indices

    def __str__(self) -> str:
        return "{" + ",".join(map(str, self.indices)) + "}"

    def check(self, q: int) -> "Subset":
        if self.indices and self.indices[-1] > q:
            raise ValidationError(f"subset {self} not contained in 1..{q}")
        return self

    def zero_based(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int) - 1

    def complement(self, q: int) -> "Subset":
        return Subset(tuple(j for j in range(1, q + 1) if j not in self.indices))

    def mask(self, q: int) -> np.ndarray:
        m = np.zeros(q, dtype=bool)
        m[self.zero_based()] = True
        return m

    def projection(self, q: int) -> np.ndarray:
        """The |S| x q selection matrix pi_S."""
        return np.eye(q)[self.zero_based()] if self.indices else np.zeros((0, q))

    def sort_key(self) -> tuple:
        return (len(self.indices), self.indices)

    def to_list(self) -> list[int]:
        return list(self.indices)


def all_subsets(q: int) -> list[Subset]:
    """All 2^q subsets, ordered by size then lexicographically."""
    out = [Subset(c) for k in range(q + 1) for c in itertools.combinations(range(1, q + 1), k)]
    return out


def nested_subsets(q: int) -> list[Subset]:
    """The q+1 nested subsets {}, {1}, {1,2}, ..., {1..q}."""
    return [Subset(tuple(range(1, k + 1))) for k in range(q + 1)]


def subset_family(q: int, family: str = "all", explicit: Iterable[Iterable[int]] | None = None) -> list[Subset]:
    if family == "all":
        return all_subsets(q)
    if family == "nested":
        return nested_subsets(q)
    if family == "explicit":
        if explicit is None:
            raise ValidationError("explicit family requires a subset list")
        seen: dict[Subset, None] = {}
        for s in explicit:
            seen[Subset(tuple(s)).check(q)] = None
        if not seen:
            raise ValidationError("explicit subset list is empty")
        return sorted(seen, key=Subset.sort_key)
    raise ValidationError(f"unknown subset family {family!r}")


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Response with protected design ``X`` (n x p) and uncertain design ``U`` (n x q)."""

    y: np.ndarray
    X: np.ndarray
    U: np.ndarray
    w: np.ndarray | None = None
    gamma0: np.ndarray | None = None
    names: tuple[tuple[str, ...], tuple[str, ...]] | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        X = np.asarray(self.X, dtype=float).reshape(n, -1) if np.size(self.X) else np.zeros((n, 0))
        U = np.asarray(self.U, dtype=float).reshape(n, -1) if np.size(self.U) else np.zeros((n, 0))
        q = U.shape[1]
        w = np.ones(n) if self.w is None else np.asarray(self.w, dtype=float).reshape(-1)
        g0 = np.zeros(q) if self.gamma0 is None else np.asarray(self.gamma0, dtype=float).reshape(-1)
        if X.shape[0] != n or U.shape[0] != n or w.shape[0] != n:
            raise ValidationError("row counts of y, X, U and w disagree")
        if g0.shape[0] != q:
            raise ValidationError(f"gamma0 has length {g0.shape[0]}, expected {q}")
        if n <= X.shape[1] + q:
            raise ValidationError(f"insufficient rows: n={n} must exceed p+q={X.shape[1] + q}")
        for name, arr in (("y", y), ("X", X), ("U", U), ("w", w), ("gamma0", g0)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {name}")
        if np.any(w < 0):
            raise ValidationError("negative weight")
        if not np.any(w > 0):
            raise ValidationError("all weights are zero")
        for name, arr in (("y", y), ("X", X), ("U", U), ("w", w), ("gamma0", g0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.U.shape[1]

    @property
    def Z(self) -> np.ndarray:
        return np.hstack([self.X, self.U])


def load_dataset(rows: Sequence[Mapping[str, object]], roles: Mapping[str, object]) -> Dataset:
    """Build a ``Dataset`` from tabular records.

    Parameters
    ----------
    rows : sequence of mappings
        One mapping per observation, e.g. the output of ``csv.DictReader``.
    roles : mapping
        ``{"response": str, "protected": [str], "uncertain": [str],
        "weight": str | None, "gamma0": [float] | None}``.
    """
    try:
        response = roles["response"]
    except KeyError:
        raise ValidationError("roles must name a response column") from None
    protected = list(roles.get("protected", []) or [])
    uncertain = list(roles.get("uncertain", []) or [])
    weight = roles.get("weight")
    if set(protected) & set(uncertain):
        raise ValidationError("protected and uncertain column lists overlap")
    cols = [response, *protected, *uncertain] + ([weight] if weight else [])
    if len(set(cols)) != len(cols):
        raise ValidationError("a column is assigned more than one role")
    rows = list(rows)
    if not rows:
        raise ValidationError("no data rows")
    header = set(rows[0].keys())
    for c in cols:
        if c not in header:
            raise ValidationError(f"missing column {c!r}")

    def column(name: str) -> np.ndarray:
        out = np.empty(len(rows))
        for i, r in enumerate(rows):
            if name not in r:
                raise ValidationError(f"missing column {name!r} in row {i + 1}")
            try:
                out[i] = float(r[name])  # type: ignore[arg-type]
            except (TypeError, ValueError):
                raise ValidationError(f"non-numeric cell {r[name]!r} in column {name!r}, row {i + 1}") from None
        return out

    y = column(response)  # type: ignore[arg-type]
    X = np.column_stack([column(c) for c in protected]) if protected else np.zeros((len(rows), 0))
    U = np.column_stack([column(c) for c in uncertain]) if uncertain else np.zeros((len(rows), 0))
    w = column(weight) if weight else None  # type: ignore[arg-type]
    g0 = roles.get("gamma0")
    return Dataset(y, X, U, w=w, gamma0=None if g0 is None else np.asarray(g0, dtype=float),
                   names=(tuple(protected), tuple(uncertain)))


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentMatrices:
    """Sigma_n, its w-weighted analogue Omega_n, and L_n = Sigma_n^{11}.

    ``L_n`` is the (uncertain, uncertain) block of ``Sigma_n^{-1}``.
    ``weighted`` records whether Omega_n came from non-unit weights.
    """

    Sigma: np.ndarray
    Omega: np.ndarray
    L: np.ndarray
    p: int
    q: int
    n: int
    weighted: bool = False
    L_inv: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    L_inv_sqrt: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.L_inv is None:
            object.__setattr__(self, "L_inv", spd_inv(self.L, "L") if self.q else np.zeros((0, 0)))
        if self.L_inv_sqrt is None:
            object.__setattr__(self, "L_inv_sqrt", sym_inv_sqrt(self.L))

    @property
    def S00(self) -> np.ndarray:
        return self.Sigma[: self.p, : self.p]

    @property
    def S01(self) -> np.ndarray:
        return self.Sigma[: self.p, self.p :]

    @property
    def S10(self) -> np.ndarray:
        return self.Sigma[self.p :, : self.p]

    @property
    def S11(self) -> np.ndarray:
        return self.Sigma[self.p :, self.p :]


def schur_L(Sigma: np.ndarray, p: int) -> np.ndarray:
    """(Sigma_11 - Sigma_10 Sigma_00^{-1} Sigma_01)^{-1}, the lower-right block of Sigma^{-1}."""
    S00, S01 = Sigma[:p, :p], Sigma[:p, p:]
    S10, S11 = Sigma[p:, :p], Sigma[p:, p:]
    if S11.size == 0:
        return np.zeros((0, 0))
    schur = S11 - S10 @ np.linalg.solve(S00, S01) if p else S11.copy()
    return spd_inv(symmetrize(schur), "Schur complement of Sigma")


def compute_moments(d: Dataset, use_weights: bool = False) -> MomentMatrices:
    Z = d.Z
    Sigma = symmetrize(Z.T @ Z / d.n)
    check_full_rank(Sigma, "Sigma_n")
    weighted = bool(use_weights and np.any(d.w != 1.0))
    Omega = symmetrize((Z * d.w[:, None]).T @ Z / d.n) if weighted else Sigma
    return MomentMatrices(Sigma=Sigma, Omega=Omega, L=schur_L(Sigma, d.p), p=d.p, q=d.q, n=d.n,
                          weighted=weighted)


def subset_projector(L: np.ndarray, S: Subset, L_inv: np.ndarray | None = None,
                     L_inv_sqrt: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(L_S, H_S)`` for a q x q SPD ``L``.

    ``L_S = (pi_S L^{-1} pi_S')^{-1}`` and
    ``H_S = L^{-1/2} pi_S' L_S pi_S L^{-1/2}``; ``H_S`` is the orthogonal
    projector onto the span of ``L^{-1/2} pi_S'``.
    """
    q = L.shape[0]
    S.check(q)
    if L_inv is None:
        L_inv = spd_inv(L, "L")
    if L_inv_sqrt is None:
        L_inv_sqrt = sym_inv_sqrt(L)
    if len(S) == 0:
        return np.zeros((0, 0)), np.zeros((q, q))
    pi = S.projection(q)
    L_S = spd_inv(pi @ L_inv @ pi.T, "pi_S L^{-1} pi_S'")
    A = L_inv_sqrt @ pi.T
    return L_S, symmetrize(A @ L_S @ A.T)


def subset_blocks(m: MomentMatrices, S: Subset) -> tuple[np.ndarray, np.ndarray]:
    return subset_projector(m.L, S, m.L_inv, m.L_inv_sqrt)


# ---------------------------------------------------------------------------
# Fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsetFit:
    """Least-squares fit of one submodel plus the full-model summaries.

    ``sigma2_full``, ``D_n`` and ``phi_hat`` always come from the full model.
    """

    S: Subset
    beta_S: np.ndarray
    gamma_S: np.ndarray
    sigma2_full: float
    gamma_full: np.ndarray
    D_n: np.ndarray
    phi_hat: np.ndarray
    n: int
    p: int
    q: int
    fitted: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


def _lstsq(Z: np.ndarray, y: np.ndarray, what: str) -> np.ndarray:
    if Z.shape[1] == 0:
        return np.zeros(0)
    check_full_rank(Z.T @ Z / Z.shape[0], what)
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    return coef


@dataclass(frozen=True)
class _FullFit:
    gamma_full: np.ndarray
    sigma2: float
    D_n: np.ndarray
    phi_hat: np.ndarray


def _full_fit(d: Dataset, m: MomentMatrices) -> _FullFit:
    dof = d.n - d.p - d.q
    if dof <= 0:
        raise ValidationError("nonpositive residual degrees of freedom")
    coef = _lstsq(d.Z, d.y, "full design [X U]")
    resid = d.y - d.Z @ coef
    sigma2 = float(resid @ resid) / dof
    g = coef[d.p :]
    centred = g - d.gamma0
    return _FullFit(g, sigma2, math.sqrt(d.n) * centred, m.L_inv_sqrt @ centred if d.q else np.zeros(0))


def fit_subset(d: Dataset, S: Subset, m: MomentMatrices | None = None) -> SubsetFit:
    """Fit the S-submodel by least squares with gamma_{S^c} frozen at gamma0."""
    S.check(d.q)
    if m is None:
        m = compute_moments(d)
    full = _full_fit(d, m)
    return _fit_with(d, S, full)


def fit_all(d: Dataset, subsets: Iterable[Subset], m: MomentMatrices | None = None) -> list[SubsetFit]:
    """Fit several submodels sharing one full-model fit."""
    if m is None:
        m = compute_moments(d)
    full = _full_fit(d, m)
    return [_fit_with(d, S.check(d.q), full) for S in subsets]


def _fit_with(d: Dataset, S: Subset, full: _FullFit) -> SubsetFit:
    inS = S.mask(d.q)
    offset = d.U[:, ~inS] @ d.gamma0[~inS]
    ZS = np.hstack([d.X, d.U[:, inS]])
    coef = _lstsq(ZS, d.y - offset, f"submodel design for S={S}")
    return SubsetFit(S=S, beta_S=coef[: d.p], gamma_S=coef[d.p :], sigma2_full=full.sigma2,
                     gamma_full=full.gamma_full, D_n=full.D_n, phi_hat=full.phi_hat,
                     n=d.n, p=d.p, q=d.q, fitted=ZS @ coef + offset)


# ---------------------------------------------------------------------------
# Foci
# ---------------------------------------------------------------------------

FOCUS_KINDS = ("point", "gamma", "beta", "custom")


@dataclass(frozen=True)
class FocusSpec:
    """A linear focus mu = x0' beta + u0' gamma, or a bare focus vector omega.

    kind
        ``"point"``: prediction at ``(x0, u0)``; ``"gamma"``: coefficient
        gamma_j; ``"beta"``: coefficient beta_j written as the contrast
        E(Y | x + e_j, u) - E(Y | x, u); ``"custom"``: ``omega`` given directly
        (optionally with gradients ``x0``/``u0``).
    """

    kind: str
    j: int | None = None
    x0: np.ndarray | None = None
    u0: np.ndarray | None = None
    omega: np.ndarray | None = None
    tau0_sq: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in FOCUS_KINDS:
            raise ValidationError(f"unknown focus kind {self.kind!r}")
        if self.kind in ("gamma", "beta") and (self.j is None or self.j < 1):
            raise ValidationError(f"{self.kind} focus needs a 1-based index j")
        for name in ("x0", "u0", "omega"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(-1)
                if not np.all(np.isfinite(v)):
                    raise ValidationError(f"focus {name} must be finite")
                object.__setattr__(self, name, v)
        if self.kind == "custom" and self.omega is None and (self.x0 is None or self.u0 is None):
            raise ValidationError("custom focus needs omega or both gradients x0 and u0")

    @classmethod
    def gamma(cls, j: int) -> "FocusSpec":
        return cls("gamma", j=j)

    @classmethod
    def beta(cls, j: int) -> "FocusSpec":
        return cls("beta", j=j)

    @classmethod
    def point(cls, x0, u0) -> "FocusSpec":
        return cls("point", x0=x0, u0=u0)

    def gradients(self, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
        """Derivatives of mu with respect to (beta, gamma)."""
        if self.kind == "gamma":
            if self.j > q:  # type: ignore[operator]
                raise ValidationError(f"gamma index {self.j} exceeds q={q}")
            return np.zeros(p), np.eye(q)[self.j - 1]  # type: ignore[operator]
        if self.kind == "beta":
            if self.j > p:  # type: ignore[operator]
                raise ValidationError(f"beta index {self.j} exceeds p={p}")
            return np.eye(p)[self.j - 1], np.zeros(q)  # type: ignore[operator]
        if self.x0 is None or self.u0 is None:
            raise ValidationError("point-prediction focus needs a point (x0, u0)")
        if self.x0.shape[0] != p or self.u0.shape[0] != q:
            raise ValidationError(f"focus point dimensions {self.x0.shape[0]}, {self.u0.shape[0]} != {p}, {q}")
        return self.x0, self.u0

    def loading(self, p: int, q: int) -> np.ndarray:
        """The length p+q vector z with mu = z' (beta, gamma)."""
        a, b = self.gradients(p, q)
        return np.concatenate([a, b])


def omega_from_blocks(S00: np.ndarray, S10: np.ndarray, x0: np.ndarray, u0: np.ndarray) -> np.ndarray:
    """omega = Sigma_10 Sigma_00^{-1} x0 - u0."""
    if S00.size == 0:
        return -np.asarray(u0, dtype=float)
    return S10 @ np.linalg.solve(S00, x0) - u0


def focus_omega(f: FocusSpec, m: MomentMatrices, point: tuple | None = None) -> np.ndarray:
    """Focus vector omega for a linear-model focus.

    For a coefficient gamma_j this is exactly ``-e_j``. For prediction at
    ``(x0, u0)`` it is ``Sigma_10 Sigma_00^{-1} x0 - u0``.
    """
    if f.kind == "custom" and f.omega is not None:
        if f.omega.shape[0] != m.q:
            raise ValidationError(f"omega has length {f.omega.shape[0]}, expected {m.q}")
        return f.omega.copy()
    if f.kind == "gamma":
        _, u = f.gradients(m.p, m.q)
        return -u
    if f.kind == "point" and point is not None:
        f = FocusSpec.point(*point)
    x0, u0 = f.gradients(m.p, m.q)
    return omega_from_blocks(m.S00, m.S10, x0, u0)
