from __future__ import annotations

import math

import numpy as np
import pytest

from ficsel import Dataset


def random_spd(rng: np.random.Generator, d: int, ridge: float = 0.5) -> np.ndarray:
    A = rng.standard_normal((d, d))
    return A @ A.T / d + ridge * np.eye(d)


def hadamard8() -> np.ndarray:
    """Four mutually orthogonal +-1 columns of length 8, the first constant."""
    a = np.array([1, -1, 1, -1, 1, -1, 1, -1], float)
    b = np.array([1, 1, -1, -1, 1, 1, -1, -1], float)
    return np.column_stack([np.ones(8), a, b, a * b])


def worked_dataset() -> Dataset:
    """n = 8, p = 1, q = 2 with Sigma_n = I, D_n = (3, 0) and sigma2 = 1."""
    H = hadamard8()
    y = H[:, 1:3] @ np.array([3 / math.sqrt(8), 0.0]) + math.sqrt(5 / 8) * H[:, 3]
    return Dataset(y, H[:, :1], H[:, 1:3])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def worked() -> Dataset:
    return worked_dataset()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
