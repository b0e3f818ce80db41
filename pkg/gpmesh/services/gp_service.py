# services/gp_service.py - Gaussian-process regression on small training sets
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from gpmesh.errors import GPConditioningError

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
JITTER = 1e-9


def gaussian_kernel(a: np.ndarray, b: np.ndarray, sigma_f: float, length_scale: float) -> np.ndarray:
    """k(a, b) = sigma_f^2 exp(-|a - b|^2 / (2 l^2))."""
    sq = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
    return sigma_f ** 2 * np.exp(-sq / (2.0 * length_scale ** 2))


def _factor(k_mm: np.ndarray, sigma_in_sq: float, sigma_f: float, key: Optional[int]):
    diagonal = sigma_in_sq + JITTER * sigma_f ** 2
    system = k_mm + diagonal * np.eye(k_mm.shape[0])
    # Gershgorin: lambda_max <= max row sum, lambda_min >= diagonal (K_mm is PSD)
    bound = np.abs(system).sum(axis=1).max() / diagonal
    if bound > MAX_CONDITION:
        condition = np.linalg.cond(system)
        if condition > MAX_CONDITION:
            raise GPConditioningError(condition, key)
    try:
        return cho_factor(system, lower=True)
    except LinAlgError:
        logger.debug(f"Cholesky failed on a jittered system (cell {key})")
        raise GPConditioningError(float("inf"), key)


def gp_train_predict(train_x: np.ndarray, train_f: np.ndarray, test_x: np.ndarray, sigma_f: float,
                     length_scale: float, sigma_in_sq: float,
                     key: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-mean GP posterior mean and variance at `test_x`.

    A    = K_mm + (sigma_in^2 + JITTER sigma_f^2) I
    mean = k_mn^T A^-1 f
    var  = k_nn - k_mn^T A^-1 k_mn, clipped to [0, sigma_f^2]
    """
    train_x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    train_f = np.asarray(train_f, dtype=np.float64).reshape(-1)
    test_x = np.atleast_2d(np.asarray(test_x, dtype=np.float64))
    if train_x.shape[0] == 0:
        raise ValueError("GP needs at least one training point")
    if train_x.shape[0] != train_f.shape[0]:
        raise ValueError("training locations and values differ in length")
    if not sigma_in_sq > 0:
        raise ValueError(f"sigma_in_sq must be positive, got {sigma_in_sq}")

    k_mm = gaussian_kernel(train_x, train_x, sigma_f, length_scale)
    factor = _factor(k_mm, sigma_in_sq, sigma_f, key)
    k_mn = gaussian_kernel(train_x, test_x, sigma_f, length_scale)
    mean = k_mn.T @ cho_solve(factor, train_f)
    v = cho_solve(factor, k_mn)
    variance = sigma_f ** 2 - np.einsum("ij,ij->j", k_mn, v)
    return mean, np.clip(variance, 0.0, sigma_f ** 2)
