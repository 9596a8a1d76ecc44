from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd
from ficsel import FocusSpec, LimitSpec, Subset, ValidationError, limit_risk_closed_form
from ficsel.design import all_subsets
from ficsel.errors import NumericalError
from ficsel.second_order import (
    BiasModel,
    FocusDerivatives,
    RiskExpansion,
    b1_v1_from_limit,
    b2_term,
    corrected_risk,
    finite_difference_derivatives,
    focus_derivatives,
)


class TestB1V1:
    def test_full_model_unbiased(self, rng):
        spec = LimitSpec(2, 3, 1.2, random_spd(rng, 5), rng.normal(0, 2, 3))
        for focus in (FocusSpec.gamma(2), FocusSpec.point([1.0, 0.5], [0.3, -0.2, 1.0]), FocusSpec.beta(1)):
            B1, _ = b1_v1_from_limit(spec, Subset.full(3), focus)
            assert abs(B1) < 1e-10

    def test_zero_delta(self, rng):
        spec = LimitSpec(1, 3, 1.0, random_spd(rng, 4), np.zeros(3))
        for S in all_subsets(3):
            assert abs(b1_v1_from_limit(spec, S, FocusSpec.point([1.0], [1.0, 2.0, 3.0]))[0]) < 1e-12

    def test_empty_model_gamma_focus(self):
        spec = LimitSpec(1, 1, 1.0, np.eye(2), np.array([2.0]))
        B1, V1 = b1_v1_from_limit(spec, Subset(()), FocusSpec.gamma(1))
        assert B1 == -2.0
        assert V1 == 0.0

    def test_matches_rank_one_closed_form(self, rng):
        for _ in range(50):
            p, q = int(rng.integers(1, 3)), int(rng.integers(1, 4))
            spec = LimitSpec(p, q, float(rng.uniform(0.5, 2)), random_spd(rng, p + q), rng.normal(0, 2, q))
            focus = FocusSpec.point(rng.standard_normal(p), rng.standard_normal(q))
            z = focus.loading(p, q)
            for S in all_subsets(q):
                B1, V1 = b1_v1_from_limit(spec, S, focus)
                ref = limit_risk_closed_form(spec, S, np.outer(z, z))
                assert abs(B1**2 + V1 - ref) <= 1e-8 * max(1.0, ref)

    def test_custom_without_gradients(self):
        spec = LimitSpec(1, 1, 1.0, np.eye(2), [0.0])
        with pytest.raises(ValidationError):
            b1_v1_from_limit(spec, Subset(()), FocusSpec("custom", omega=[1.0]))


class TestB2:
    def test_hand_evaluation(self):
        fd = FocusDerivatives([2.0], [[2.0]], [[2.0]], [[1.0]])
        assert b2_term(fd, BiasModel.zero(), Subset.of(1), [2.0]) == pytest.approx(-3.0)

    def test_linear_focus_is_zero(self):
        nd = finite_difference_derivatives(lambda t, g: 1.5 * t[0] - 2.0 * g[0] + 0.5 * g[1], [0.3], [0.1, -0.4])
        for S in all_subsets(2):
            k = 1 + len(S)
            fd = focus_derivatives(nd, S, np.eye(k))
            assert abs(b2_term(fd, BiasModel.zero(), S, [1.0, -2.0])) < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(c=st.floats(-10, 10).filter(lambda x: abs(x) > 1e-3), seed=st.integers(0, 1000))
    def test_scaling(self, c, seed):
        rng = np.random.default_rng(seed)
        g = rng.standard_normal(2)
        A = rng.standard_normal((2, 2))
        m11 = A + A.T
        m22 = np.diag(rng.standard_normal(2))
        J = random_spd(rng, 2)
        delta = rng.standard_normal(2)
        base = b2_term(FocusDerivatives(g, m11, m22, J), BiasModel.zero(), Subset.of(1), delta)
        scaled = b2_term(FocusDerivatives(c * g, c * m11, c * m22, J), BiasModel.zero(), Subset.of(1), delta)
        assert scaled == pytest.approx(c * base, rel=1e-10, abs=1e-12)

    def test_user_bias_model(self):
        fd = FocusDerivatives([1.0, 2.0], np.zeros((2, 2)), np.zeros((1, 1)), np.eye(2))
        bm = BiasModel.user(lambda S, d: np.array([0.5, 0.25]) * d[0])
        assert b2_term(fd, bm, Subset.of(1), [2.0]) == pytest.approx(2.0)
        assert bm.provenance == "user-supplied"
        bad = BiasModel.user(lambda S, d: np.array([np.nan, 0.0]))
        with pytest.raises(NumericalError):
            b2_term(fd, bad, Subset.of(1), [2.0])
        with pytest.raises(ValidationError):
            b2_term(fd, BiasModel.user(lambda S, d: np.zeros(3)), Subset.of(1), [2.0])

    def test_validation(self):
        with pytest.raises(ValidationError):
            FocusDerivatives([1.0], [[1.0]], [[1.0]], [[-1.0]])
        with pytest.raises(ValidationError):
            FocusDerivatives([1.0, 2.0], [[1.0]], [[1.0]], [[1.0]])
        with pytest.raises(ValidationError):
            BiasModel(None, "user-supplied")

    def test_json_round_trip(self):
        fd = FocusDerivatives([1.0, 0.5], [[1.0, 0.2], [0.2, 3.0]], [[0.5]], [[2.0, 0.1], [0.1, 1.0]])
        back = FocusDerivatives.from_json(fd.to_json())
        for name in ("dmu_dphi_S", "mu11_S", "mu22", "J_S"):
            np.testing.assert_array_equal(getattr(back, name), getattr(fd, name))


class TestCorrectedRisk:
    def test_zero_b2(self):
        exp = RiskExpansion(1.0, 1.0, 0.0)
        for n in (1, 10, 1e6):
            assert corrected_risk(exp, n).value == exp.leading

    def test_arithmetic(self):
        res = corrected_risk(RiskExpansion(1.0, 1.0, -3.0), 100)
        assert res.leading == 2.0
        assert res.value == pytest.approx(1.4)

    def test_one_over_root_n(self):
        exp = RiskExpansion(0.7, 2.0, 1.3)
        assert exp.correction(400) == pytest.approx(exp.correction(100) / 2)

    def test_monotone_toward_leading(self):
        exp = RiskExpansion(0.5, 1.0, 2.0)
        vals = [corrected_risk(exp, n).value for n in (10, 100, 1000, 10_000)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert all(v > exp.leading for v in vals)

    def test_bad_n(self):
        with pytest.raises(ValidationError):
            corrected_risk(RiskExpansion(1, 1, 1), 0)


class TestFiniteDifferences:
    def test_square(self):
        nd = finite_difference_derivatives(lambda t, g: g[0] ** 2, np.zeros(0), [1.0])
        assert nd.gradient[0] == pytest.approx(2.0, abs=1e-6)
        assert nd.hessian[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_linear(self):
        nd = finite_difference_derivatives(lambda t, g: 3 * t[0] - g[0] + 7 * g[1], [2.0], [-1.0, 5.0])
        assert np.max(np.abs(nd.hessian)) < 1e-8
        np.testing.assert_allclose(nd.gradient, [3, -1, 7], atol=1e-8)

    def test_cross(self):
        nd = finite_difference_derivatives(lambda t, g: t[0] * g[0], [0.7], [1.3])
        assert nd.hessian[0, 1] == pytest.approx(1.0, abs=1e-6)
        assert nd.hessian[1, 0] == nd.hessian[0, 1]

    def test_smooth_function(self):
        f = lambda t, g: math.exp(0.5 * t[0]) * math.sin(g[0]) + g[1] ** 3
        nd = finite_difference_derivatives(f, [0.4], [0.9, -1.1])
        t, a, b = 0.4, 0.9, -1.1
        H = np.array([
            [0.25 * math.exp(0.5 * t) * math.sin(a), 0.5 * math.exp(0.5 * t) * math.cos(a), 0.0],
            [0.5 * math.exp(0.5 * t) * math.cos(a), -math.exp(0.5 * t) * math.sin(a), 0.0],
            [0.0, 0.0, 6 * b],
        ])
        np.testing.assert_allclose(nd.hessian, H, atol=1e-6)
        np.testing.assert_allclose(nd.mu22, H[1:, 1:], atol=1e-6)

    def test_blocks(self):
        nd = finite_difference_derivatives(lambda t, g: t[0] * g[1] + g[0] ** 2, [1.0], [2.0, 3.0])
        g, m11, m22 = nd.blocks(Subset.of(2))
        np.testing.assert_allclose(g, [3.0, 1.0], atol=1e-8)
        np.testing.assert_allclose(m11, [[0.0, 1.0], [1.0, 0.0]], atol=1e-6)
        assert m22.shape == (2, 2)

    def test_failures(self):
        with pytest.raises(NumericalError):
            finite_difference_derivatives(lambda t, g: math.log(g[0]), [], [0.0])
        with pytest.raises(ValidationError):
            finite_difference_derivatives(lambda t, g: 0.0, [], [1.0], h=0.0)
