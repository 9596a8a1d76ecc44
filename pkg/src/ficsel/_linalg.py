"""Small dense linear-algebra helpers shared by the modules."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, RankDeficiencyError

RANK_TOL = 1e-10


def check_full_rank(A: np.ndarray, what: str = "matrix") -> None:
    """Raise ``RankDeficiencyError`` if ``A`` is numerically rank deficient.

    The threshold is on the ratio of smallest to largest singular value.
    """
    if A.size == 0:
        return
    s = np.linalg.svd(A, compute_uv=False)
    if not np.all(np.isfinite(s)):
        raise NumericalError(f"{what} has non-finite entries")
    if s[0] == 0.0 or s[-1] / s[0] < RANK_TOL:
        raise RankDeficiencyError(f"{what} is rank deficient (cond ratio {s[-1] / s[0] if s[0] else 0.0:.3g})")


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def sym_power(A: np.ndarray, power: float) -> np.ndarray:
    """Spectral power of a symmetric positive definite matrix."""
    if A.size == 0:
        return np.zeros_like(A, dtype=float)
    vals, vecs = np.linalg.eigh(symmetrize(A))
    if vals[0] <= 0.0:
        raise NumericalError("matrix is not positive definite")
    return symmetrize((vecs * vals**power) @ vecs.T)


def sym_sqrt(A: np.ndarray) -> np.ndarray:
    return sym_power(A, 0.5)


def sym_inv_sqrt(A: np.ndarray) -> np.ndarray:
    return sym_power(A, -0.5)


def spd_inv(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    check_full_rank(A, what)
    return symmetrize(np.linalg.inv(A))


def is_spd(A: np.ndarray, tol: float = 0.0) -> bool:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    if A.size == 0:
        return True
    if not np.allclose(A, A.T, atol=1e-12, rtol=1e-10):
        return False
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return np.linalg.eigvalsh(A)[0] > tol
