"""Exact Gaussian-process regression, used as a numerical reference.

Plain conjugate GP regression with a full Cholesky of ``K + noise * I``.
Nothing here scales past desk-sized problems; the point is to have an
independent answer the sparse dual representation can be compared against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import GramFactor, KernelSpec, gram, gram_diag, stable_cholesky


@dataclass
class ExactPosterior:
    kernel: KernelSpec
    noise_variance: float
    x_train: np.ndarray
    y_train: np.ndarray
    factor: GramFactor
    weights: np.ndarray


def fit_exact(
    kernel: KernelSpec, x_train: np.ndarray, y_train: np.ndarray, noise_variance: float
) -> ExactPosterior:
    """Factorize ``K + noise * I`` and precompute the representer weights."""
    x_train = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
    y_train = np.asarray(y_train, dtype=np.float64)
    k = gram(kernel, x_train)
    factor = stable_cholesky(k + noise_variance * np.eye(len(x_train)))
    return ExactPosterior(
        kernel=kernel,
        noise_variance=noise_variance,
        x_train=x_train,
        y_train=y_train,
        factor=factor,
        weights=factor.solve(y_train),
    )


def predict_exact(post: ExactPosterior, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the latent function at ``x_star``."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    k_star = gram(post.kernel, post.x_train, x_star)
    mean = k_star.T @ post.weights
    half = post.factor.half_solve(k_star)
    var = gram_diag(post.kernel, x_star) - np.sum(half * half, axis=0)
    return mean, var


def log_marginal(post: ExactPosterior) -> float:
    """Log marginal likelihood ``log N(y | 0, K + noise * I)``."""
    n = len(post.y_train)
    return -0.5 * (
        float(post.y_train @ post.weights) + post.factor.logdet() + n * math.log(2.0 * math.pi)
    )
