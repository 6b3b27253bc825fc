import math

import numpy as np
import pytest

from raremap_quant.gp import (
    GpModel,
    Matern52Params,
    _chol_with_jitter,
    _likelihood_objective,
    fit_gp,
    gp_from_params,
    gp_mean,
    gp_mean_batch,
    matern52,
)

SQRT5 = math.sqrt(5.0)


def smooth_1d(x):
    return np.sin(1.3 * x) + 0.4 * x


class TestKernel:
    def test_zero_distance_gives_variance(self):
        p = Matern52Params(2.5, [1.0, 3.0])
        assert matern52([0.2, -1.0], [0.2, -1.0], p) == 2.5

    def test_hand_value_at_unit_distance(self):
        p = Matern52Params(1.0, [1.0])
        expected = (1.0 + SQRT5 + 5.0 / 3.0) * math.exp(-SQRT5)
        assert matern52([0.0], [1.0], p) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(0.52399, abs=5e-6)

    def test_symmetric_bitwise(self):
        rng = np.random.default_rng(0)
        p = Matern52Params(1.7, rng.uniform(0.5, 2.0, size=4))
        for _ in range(20):
            a, b = rng.standard_normal((2, 4))
            assert matern52(a, b, p) == matern52(b, a, p)

    def test_strictly_decreasing_in_distance(self):
        p = Matern52Params(1.0, [1.0])
        r = np.linspace(0.0, 10.0, 200)
        vals = [matern52([0.0], [d], p) for d in r]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_dimension_mismatch_rejected(self):
        p = Matern52Params(1.0, [1.0, 1.0])
        with pytest.raises(ValueError):
            matern52([0.0], [1.0], p)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            Matern52Params(0.0, [1.0])
        with pytest.raises(ValueError):
            Matern52Params(1.0, [1.0, -2.0])
        with pytest.raises(ValueError):
            Matern52Params(1.0, [1.0], nugget=-1e-9)


class TestTwoPointOracle:
    def test_prediction_matches_hand_solve(self):
        # 2x2 system solved with the explicit inverse, GLS beta by formula.
        X = np.array([[0.0], [1.0]])
        z = np.array([1.0, 2.0])
        p = Matern52Params(2.0, [0.7], nugget=0.1)
        k01 = matern52([0.0], [1.0], p)
        K = np.array([[2.1, k01], [k01, 2.1]])
        det = K[0, 0] * K[1, 1] - K[0, 1] * K[1, 0]
        Kinv = np.array([[K[1, 1], -K[0, 1]], [-K[1, 0], K[0, 0]]]) / det
        ones = np.ones(2)
        beta = (ones @ Kinv @ z) / (ones @ Kinv @ ones)
        alpha = Kinv @ (z - beta)

        model = gp_from_params(X, z, p)
        assert model.beta == pytest.approx(beta, rel=1e-12)
        for xs in (0.3, -0.5, 2.0):
            kv = np.array([matern52([xs], [0.0], p), matern52([xs], [1.0], p)])
            assert gp_mean(model, [xs]) == pytest.approx(beta + kv @ alpha, abs=1e-10)

    def test_fixed_beta_honored(self):
        X = np.array([[0.0], [1.0]])
        z = np.array([1.0, 2.0])
        p = Matern52Params(1.0, [1.0], nugget=0.05)
        model = gp_from_params(X, z, p, beta=0.25)
        assert model.beta == 0.25


class TestFit:
    def test_constant_outputs_predict_constant(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 1, size=(10, 2))
        model = fit_gp(X, np.full(10, 3.25), n_restarts=2)
        assert model.beta == pytest.approx(3.25, abs=1e-12)
        # alpha is 0 in exact arithmetic; rounding in the GLS mean leaves dust.
        assert np.max(np.abs(model.alpha)) < 1e-6
        preds = gp_mean_batch(model, rng.uniform(-2, 2, size=(20, 2)))
        assert np.max(np.abs(preds - 3.25)) < 1e-10

    def test_refit_is_deterministic(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(0, 5, size=(15, 2))
        z = np.sin(X[:, 0]) + X[:, 1] ** 2
        m1 = fit_gp(X, z, seed=42)
        m2 = fit_gp(X, z, seed=42)
        assert m1.params.variance == m2.params.variance
        assert np.array_equal(m1.params.lengthscales, m2.params.lengthscales)
        assert m1.params.nugget == m2.params.nugget
        assert m1.beta == m2.beta

    def test_interpolates_at_zero_nugget(self):
        rng = np.random.default_rng(3)
        x = np.sort(rng.uniform(0, 5, size=12))
        z = smooth_1d(x)
        model = fit_gp(x[:, None], z, nugget=0.0, seed=0)
        assert model.jitter == 0.0
        preds = gp_mean_batch(model, x[:, None])
        scale = np.max(np.abs(z))
        assert np.max(np.abs(preds - z)) < 1e-8 * scale

    def test_far_field_reverts_to_prior_mean(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 2, size=8)
        model = fit_gp(x[:, None], smooth_1d(x), nugget=1e-8, seed=0)
        assert gp_mean(model, [1e6]) == pytest.approx(model.beta, abs=1e-6)

    def test_duplicate_inputs_need_positive_nugget(self):
        X = np.array([[0.0], [0.0], [1.0]])
        z = np.array([1.0, 1.1, 2.0])
        with pytest.raises(ValueError):
            fit_gp(X, z, nugget=0.0)
        model = fit_gp(X, z, nugget=1e-2, n_restarts=2)
        assert isinstance(model, GpModel)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            fit_gp(np.zeros((1, 2)), [1.0])
        with pytest.raises(ValueError):
            fit_gp(np.zeros((3, 2)), [1.0, 2.0])
        with pytest.raises(ValueError):
            fit_gp(np.array([[np.nan], [0.0]]), [1.0, 2.0])


class TestPrediction:
    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(0, 3, size=(10, 3))
        z = X.sum(axis=1) + np.sin(X[:, 0])
        model = fit_gp(X, z, n_restarts=2, seed=1)
        S = rng.uniform(0, 3, size=(7, 3))
        batch = gp_mean_batch(model, S)
        for i in range(7):
            assert gp_mean(model, S[i]) == batch[i]

    def test_linear_in_outputs(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(0, 1, size=(8, 2))
        z1 = rng.standard_normal(8)
        z2 = rng.standard_normal(8)
        p = Matern52Params(1.5, [0.4, 0.8], nugget=1e-6)
        S = rng.uniform(0, 1, size=(5, 2))
        pa = gp_mean_batch(gp_from_params(X, z1, p), S)
        pb = gp_mean_batch(gp_from_params(X, z2, p), S)
        pab = gp_mean_batch(gp_from_params(X, z1 + z2, p), S)
        assert np.max(np.abs(pab - (pa + pb))) < 1e-10

    def test_training_residual_shrinks_as_nugget_vanishes(self):
        rng = np.random.default_rng(7)
        x = np.sort(rng.uniform(0, 4, size=15))
        z = smooth_1d(x)
        p0 = Matern52Params(1.0, [0.8])
        norms = []
        for tau2 in (1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8):
            p = Matern52Params(p0.variance, p0.lengthscales, nugget=tau2)
            model = gp_from_params(x[:, None], z, p)
            norms.append(np.linalg.norm(gp_mean_batch(model, x[:, None]) - z))
        assert all(b <= a + 1e-15 for a, b in zip(norms, norms[1:]))

    def test_dimension_mismatch_rejected(self):
        model = fit_gp(np.array([[0.0], [1.0]]), [0.0, 1.0], nugget=1e-4, n_restarts=1)
        with pytest.raises(ValueError):
            gp_mean_batch(model, np.zeros((3, 2)))


class TestNumerics:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(0, 2, size=(12, 2))
        z = np.sin(X[:, 0]) + 0.5 * X[:, 1]
        for nugget in (None, 1e-4):
            nll = _likelihood_objective(X, z, nugget)
            n_par = 3 + (1 if nugget is None else 0)
            theta = rng.uniform(-1.0, 0.5, size=n_par)
            _, grad = nll(theta)
            h = 1e-6
            for k in range(n_par):
                e = np.zeros(n_par)
                e[k] = h
                fd = (nll(theta + e)[0] - nll(theta - e)[0]) / (2 * h)
                assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_indefinite_matrix_rejected_with_diagnostics(self):
        with pytest.raises(ValueError, match="positive definite"):
            _chol_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_jitter_resolves_semidefinite_duplicates(self):
        p = Matern52Params(1.0, [1.0])
        model = gp_from_params(np.array([[0.0], [0.0]]), [1.0, 1.0], p)
        assert model.jitter > 0.0
