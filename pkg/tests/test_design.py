from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd
from ficsel import (
    Dataset,
    FocusSpec,
    Subset,
    ValidationError,
    compute_moments,
    fit_subset,
    focus_omega,
    load_dataset,
    subset_blocks,
)
from ficsel.design import all_subsets, nested_subsets, schur_L, subset_family, subset_projector
from ficsel.errors import RankDeficiencyError


class TestSubset:
    def test_canonical_encoding(self):
        assert Subset((2, 1, 2)) == Subset.of(1, 2)
        assert str(Subset.of(2, 1)) == "{1,2}"
        assert hash(Subset((3, 1))) == hash(Subset.of(1, 3))

    def test_bounds(self):
        with pytest.raises(ValidationError):
            Subset.of(0)
        with pytest.raises(ValidationError):
            Subset.of(4).check(3)

    def test_projection_and_complement(self):
        S = Subset.of(1, 3)
        np.testing.assert_array_equal(S.projection(3), [[1, 0, 0], [0, 0, 1]])
        assert S.complement(3) == Subset.of(2)
        assert S.projection(3).shape == (2, 3)
        assert Subset(()).projection(2).shape == (0, 2)

    def test_families(self):
        assert len(all_subsets(3)) == 8
        assert nested_subsets(3) == [Subset(()), Subset.of(1), Subset.of(1, 2), Subset.of(1, 2, 3)]
        ex = subset_family(3, "explicit", [[2, 1], [1, 2], [3]])
        assert sorted(ex, key=Subset.sort_key) == ex
        assert set(ex) == {Subset.of(3), Subset.of(1, 2)}


class TestLoadDataset:
    ROWS = [{"y": "1", "x1": "1", "u1": "-1"}, {"y": "2", "x1": "1", "u1": "-1"},
            {"y": "0", "x1": "1", "u1": "1"}, {"y": "3", "x1": "1", "u1": "1"}]

    def test_basic(self):
        d = load_dataset(self.ROWS, {"response": "y", "protected": ["x1"], "uncertain": ["u1"]})
        assert (d.n, d.p, d.q) == (4, 1, 1)
        np.testing.assert_array_equal(d.y, [1, 2, 0, 3])

    def test_missing_column(self):
        with pytest.raises(ValidationError, match="missing column"):
            load_dataset(self.ROWS, {"response": "y", "protected": ["x1"], "uncertain": ["u9"]})

    def test_non_numeric(self):
        rows = [dict(r) for r in self.ROWS]
        rows[2]["u1"] = "abc"
        with pytest.raises(ValidationError, match="non-numeric"):
            load_dataset(rows, {"response": "y", "protected": ["x1"], "uncertain": ["u1"]})

    def test_insufficient_rows(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValidationError, match="insufficient rows"):
            Dataset(rng.standard_normal(3), rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))

    def test_negative_weight(self):
        rows = [dict(r, w="1") for r in self.ROWS]
        rows[0]["w"] = "-0.5"
        with pytest.raises(ValidationError, match="negative weight"):
            load_dataset(rows, {"response": "y", "protected": ["x1"], "uncertain": ["u1"], "weight": "w"})


class TestMoments:
    def test_hand_computed_identity(self):
        d = Dataset(np.zeros(4), np.ones((4, 1)), np.array([[-1.0], [-1], [1], [1]]))
        m = compute_moments(d)
        np.testing.assert_array_equal(m.Sigma, np.eye(2))
        np.testing.assert_allclose(m.L, [[1.0]])

    def test_orthogonal_blocks(self, rng):
        Z = np.linalg.qr(rng.standard_normal((50, 4)))[0] * np.sqrt(50) * np.array([1, 2, 0.5, 3])
        d = Dataset(rng.standard_normal(50), Z[:, :2], Z[:, 2:])
        m = compute_moments(d)
        np.testing.assert_allclose(m.L, np.linalg.inv(m.S11), atol=1e-10)

    def test_unit_weights_give_identical_omega(self, rng):
        d = Dataset(rng.standard_normal(30), rng.standard_normal((30, 2)), rng.standard_normal((30, 2)),
                    w=np.ones(30))
        m = compute_moments(d, use_weights=True)
        assert np.array_equal(m.Omega, m.Sigma)
        assert not m.weighted

    def test_weighted_omega(self, rng):
        w = rng.uniform(0, 2, 30)
        d = Dataset(rng.standard_normal(30), rng.standard_normal((30, 1)), rng.standard_normal((30, 2)), w=w)
        m = compute_moments(d, use_weights=True)
        np.testing.assert_allclose(m.Omega, (d.Z * w[:, None]).T @ d.Z / 30)
        assert m.weighted

    def test_schur_matches_inverse_block(self, rng):
        Sigma = random_spd(rng, 5)
        np.testing.assert_allclose(schur_L(Sigma, 2), np.linalg.inv(Sigma)[2:, 2:], atol=1e-10)

    def test_rank_deficiency(self, rng):
        U = rng.standard_normal((20, 1))
        with pytest.raises(RankDeficiencyError):
            compute_moments(Dataset(rng.standard_normal(20), np.hstack([U, np.ones((20, 1))]), 2 * U))


class TestSubsetBlocks:
    def test_endpoints(self, rng):
        L = random_spd(rng, 3)
        _, H_full = subset_projector(L, Subset.full(3))
        _, H_empty = subset_projector(L, Subset(()))
        np.testing.assert_allclose(H_full, np.eye(3), atol=1e-12)
        np.testing.assert_array_equal(H_empty, np.zeros((3, 3)))

    def test_identity_L(self):
        L_S, H = subset_projector(np.eye(2), Subset.of(1))
        np.testing.assert_allclose(L_S, [[1.0]])
        np.testing.assert_allclose(H, np.diag([1.0, 0.0]))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), q=st.integers(1, 6))
    def test_projector_properties(self, seed, q):
        rng = np.random.default_rng(seed)
        L = random_spd(rng, q, ridge=0.1)
        H = {S: subset_projector(L, S)[1] for S in all_subsets(q)}
        for S, HS in H.items():
            np.testing.assert_allclose(HS, HS.T, atol=1e-10)
            np.testing.assert_allclose(HS @ HS, HS, atol=1e-10)
            assert abs(np.trace(HS) - len(S)) < 1e-10
        v = rng.standard_normal((10, q))
        for S, T in itertools.product(H, repeat=2):
            if set(S) <= set(T):
                assert np.all(np.einsum("ij,jk,ik->i", v, H[T] - H[S], v) >= -1e-10)


class TestFit:
    def test_hand_solved(self):
        d = Dataset(np.array([0.0, 0, 2, 2]), np.ones((4, 1)), np.array([[-1.0], [-1], [1], [1]]))
        f = fit_subset(d, Subset.of(1))
        np.testing.assert_allclose(f.beta_S, [1.0])
        np.testing.assert_allclose(f.gamma_S, [1.0])

    def test_exact_protected_fit(self, rng):
        X = rng.standard_normal((10, 2))
        b = np.array([1.5, -2.0])
        d = Dataset(X @ b, X, rng.standard_normal((10, 1)))
        f = fit_subset(d, Subset(()))
        np.testing.assert_allclose(f.beta_S, b, atol=1e-12)
        np.testing.assert_allclose(d.y - f.fitted, 0, atol=1e-12)

    def test_centering_at_full_estimate(self, rng):
        d0 = Dataset(rng.standard_normal(20), rng.standard_normal((20, 1)), rng.standard_normal((20, 2)))
        g = fit_subset(d0, Subset.full(2)).gamma_full
        d = Dataset(d0.y, d0.X, d0.U, gamma0=g)
        np.testing.assert_allclose(fit_subset(d, Subset.of(1)).D_n, 0, atol=1e-12)

    def test_full_fit_and_orthogonal_residuals(self, rng):
        d = Dataset(rng.standard_normal(40), rng.standard_normal((40, 2)), rng.standard_normal((40, 3)))
        f = fit_subset(d, Subset.full(3))
        coef, *_ = np.linalg.lstsq(d.Z, d.y, rcond=None)
        np.testing.assert_allclose(np.concatenate([f.beta_S, f.gamma_S]), coef, atol=1e-10)
        for S in all_subsets(3):
            fs = fit_subset(d, S)
            ZS = np.hstack([d.X, d.U[:, S.mask(3)]])
            np.testing.assert_allclose(ZS.T @ (d.y - fs.fitted), 0, atol=1e-8)

    def test_gamma0_frozen(self, rng):
        g0 = np.array([0.7, -0.3])
        d = Dataset(rng.standard_normal(25), rng.standard_normal((25, 1)), rng.standard_normal((25, 2)),
                    gamma0=g0)
        f = fit_subset(d, Subset.of(2))
        coef, *_ = np.linalg.lstsq(np.hstack([d.X, d.U[:, [1]]]), d.y - d.U[:, 0] * g0[0], rcond=None)
        np.testing.assert_allclose(np.concatenate([f.beta_S, f.gamma_S]), coef, atol=1e-12)
        np.testing.assert_allclose(f.D_n, np.sqrt(25) * (f.gamma_full - g0))

    def test_sigma2_and_phi_from_full_model(self, rng):
        d = Dataset(rng.standard_normal(30), rng.standard_normal((30, 1)), rng.standard_normal((30, 2)))
        m = compute_moments(d)
        f = fit_subset(d, Subset(()), m)
        coef, *_ = np.linalg.lstsq(d.Z, d.y, rcond=None)
        r = d.y - d.Z @ coef
        assert f.sigma2_full == pytest.approx(r @ r / 27, rel=1e-12)
        vals, vecs = np.linalg.eigh(m.L)
        np.testing.assert_allclose(f.phi_hat, (vecs / np.sqrt(vals)) @ vecs.T @ coef[1:], atol=1e-12)


class TestFocus:
    def test_gamma_focus_is_minus_unit_vector(self, rng):
        d = Dataset(rng.standard_normal(20), rng.standard_normal((20, 1)), rng.standard_normal((20, 3)))
        np.testing.assert_array_equal(focus_omega(FocusSpec.gamma(2), compute_moments(d)), [0, -1, 0])

    def test_point_focus_orthogonal_design(self):
        H = np.linalg.qr(np.random.default_rng(1).standard_normal((16, 3)))[0] * 4
        d = Dataset(np.zeros(16), H[:, :1], H[:, 1:])
        m = compute_moments(d)
        u0 = np.array([0.3, -1.2])
        np.testing.assert_allclose(focus_omega(FocusSpec("point"), m, point=([2.0], u0)), -u0, atol=1e-12)
        np.testing.assert_allclose(focus_omega(FocusSpec.point([5.0], [0.0, 0.0]), m), 0, atol=1e-12)

    def test_point_focus_general(self, rng):
        d = Dataset(rng.standard_normal(20), rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))
        m = compute_moments(d)
        x0, u0 = np.array([1.0, 2.0]), np.array([-1.0, 0.5])
        want = m.S10 @ np.linalg.solve(m.S00, x0) - u0
        np.testing.assert_allclose(focus_omega(FocusSpec.point(x0, u0), m), want)

    def test_missing_point(self, rng):
        d = Dataset(rng.standard_normal(20), rng.standard_normal((20, 1)), rng.standard_normal((20, 2)))
        with pytest.raises(ValidationError, match="point"):
            focus_omega(FocusSpec("point"), compute_moments(d))

    def test_custom_passthrough(self, rng):
        d = Dataset(rng.standard_normal(20), rng.standard_normal((20, 1)), rng.standard_normal((20, 2)))
        np.testing.assert_array_equal(focus_omega(FocusSpec("custom", omega=[1.0, 2.0]), compute_moments(d)), [1, 2])


def test_subset_blocks_uses_moments(rng):
    d = Dataset(rng.standard_normal(30), rng.standard_normal((30, 1)), rng.standard_normal((30, 3)))
    m = compute_moments(d)
    L_S, H = subset_blocks(m, Subset.of(1, 3))
    pi = Subset.of(1, 3).projection(3)
    np.testing.assert_allclose(L_S, np.linalg.inv(pi @ np.linalg.inv(m.L) @ pi.T))
