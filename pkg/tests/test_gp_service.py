"""
Gaussian-process regression: closed forms, a dense-solve oracle and conditioning guards.
"""

import numpy as np
import pytest

from gpmesh.errors import GPConditioningError
from gpmesh.services.gp_service import JITTER, gaussian_kernel, gp_train_predict


def dense_posterior(train_x, train_f, test_x, sigma_f, length, sigma_in_sq):
    k_mm = gaussian_kernel(train_x, train_x, sigma_f, length)
    k_mn = gaussian_kernel(train_x, test_x, sigma_f, length)
    system = (sigma_in_sq + JITTER * sigma_f ** 2) * np.eye(train_x.shape[0]) + k_mm
    mean = k_mn.T @ np.linalg.solve(system, train_f)
    var = sigma_f ** 2 - np.sum(k_mn * np.linalg.solve(system, k_mn), axis=0)
    return mean, var


class TestClosedForms:
    def test_kernel_values(self):
        k = gaussian_kernel(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]), 2.0, 0.5)
        np.testing.assert_allclose(k, [[4.0, 4.0 * np.exp(-2.0)]])

    def test_interpolates_single_point(self):
        mean, _ = gp_train_predict([[0.3, 0.7]], [0.42], [[0.3, 0.7]], 1.0, 0.5, 1e-12)
        assert mean[0] == pytest.approx(0.42, abs=1e-6)

    def test_single_point_closed_form(self):
        sigma_f, length, noise = 1.3, 0.5, 0.01
        x, f = np.array([[0.2, 0.1]]), np.array([0.8])
        test = np.array([[0.5, 0.4]])
        k = sigma_f ** 2 * np.exp(-0.18 / (2 * length ** 2))
        mean, var = gp_train_predict(x, f, test, sigma_f, length, noise)
        denom = sigma_f ** 2 + noise + JITTER * sigma_f ** 2
        assert mean[0] == pytest.approx(k * f[0] / denom, abs=1e-12)
        assert var[0] == pytest.approx(sigma_f ** 2 - k ** 2 / denom, abs=1e-12)

    def test_far_field_reverts_to_prior(self):
        mean, var = gp_train_predict([[0.0, 0.0]], [5.0], [[100.0, 100.0]], 1.0, 0.5, 0.01)
        assert mean[0] == pytest.approx(0.0, abs=1e-9)
        assert var[0] == pytest.approx(1.0, abs=1e-9)


class TestDenseOracle:
    def test_matches_dense_solve(self, rng):
        for _ in range(500):
            m = int(rng.integers(1, 6))
            train_x = rng.random((m, 2))
            train_f = rng.normal(size=m)
            test_x = rng.random((16, 2))
            mean, var = gp_train_predict(train_x, train_f, test_x, 1.0, 0.5, 1e-2)
            ref_mean, ref_var = dense_posterior(train_x, train_f, test_x, 1.0, 0.5, 1e-2)
            np.testing.assert_allclose(mean, ref_mean, atol=1e-9)
            np.testing.assert_allclose(var, np.clip(ref_var, 0.0, 1.0), atol=1e-9)

    def test_variance_bounds(self, rng):
        train_x = rng.random((30, 2))
        _, var = gp_train_predict(train_x, rng.normal(size=30), rng.random((200, 2)) * 3 - 1, 0.7, 0.3, 1e-3)
        assert np.all(var >= 0.0) and np.all(var <= 0.49)

    def test_more_data_never_raises_variance(self, rng):
        test_x = rng.random((25, 2))
        train_x = rng.random((8, 2))
        train_f = rng.normal(size=8)
        _, before = gp_train_predict(train_x[:7], train_f[:7], test_x, 1.0, 0.5, 1e-2)
        _, after = gp_train_predict(train_x, train_f, test_x, 1.0, 0.5, 1e-2)
        assert np.all(after <= before + 1e-12)


class TestGuards:
    def test_ill_conditioned_system(self):
        # duplicates push lambda_max / lambda_min past 1e12 even after jitter
        train_x = np.zeros((1500, 2))
        with pytest.raises(GPConditioningError) as exc:
            gp_train_predict(train_x, np.ones(1500), [[0.0, 0.0]], 1.0, 0.5, 1e-13, key=7)
        assert exc.value.key == 7

    def test_jitter_always_regularizes(self):
        # a well-conditioned system still carries the jitter term
        mean, _ = gp_train_predict([[0.0, 0.0]], [1000.0], [[0.0, 0.0]], 1.0, 0.5, 1e-12)
        assert mean[0] == pytest.approx(1000.0 / (1.0 + 1e-12 + JITTER), abs=1e-8)
        assert mean[0] != pytest.approx(1000.0 / (1.0 + 1e-12), abs=1e-8)

    def test_needs_training_points(self):
        with pytest.raises(ValueError):
            gp_train_predict(np.zeros((0, 2)), np.zeros(0), [[0.0, 0.0]], 1.0, 0.5, 1e-2)

    def test_noise_must_be_positive(self):
        with pytest.raises(ValueError):
            gp_train_predict([[0.0, 0.0]], [1.0], [[0.0, 0.0]], 1.0, 0.5, 0.0)
