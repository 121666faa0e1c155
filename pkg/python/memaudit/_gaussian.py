from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._core import Dataset
from ._errors import ConfigurationError, DimensionMismatchError, FitError
from ._types import CovarianceMode

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6

_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mean: np.ndarray
    # variance vector in diagonal mode, D x D matrix in full mode
    covariance: np.ndarray
    degenerate: bool = False

    @property
    def mode(self) -> CovarianceMode:
        return 'full' if self.covariance.ndim == 2 else 'diagonal'

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian_mle(
    data: Dataset, mode: CovarianceMode = 'diagonal'
) -> GaussianParams:
    X = data.observations
    n, dim = X.shape
    mean = X.mean(axis=0)
    centred = X - mean

    if mode == 'diagonal':
        variance = (centred**2).mean(axis=0)
        degenerate = bool(n < 2 or (variance < VARIANCE_FLOOR).any())
        if degenerate:
            logger.warning('variance floor applied to a degenerate Gaussian fit')
        return GaussianParams(
            mean=mean,
            covariance=np.maximum(variance, VARIANCE_FLOOR),
            degenerate=degenerate,
        )

    if mode != 'full':
        raise ConfigurationError(f'unknown covariance mode {mode!r}')
    if n <= dim:
        raise FitError(
            f'full covariance needs n > D, got n={n}, D={dim}', family='gaussian-mle'
        )
    cov = centred.T @ centred / n
    cov = 0.5 * (cov + cov.T)
    smallest = float(np.linalg.eigvalsh(cov)[0])
    degenerate = smallest < VARIANCE_FLOOR
    if degenerate:
        logger.warning('variance floor applied to a degenerate Gaussian fit')
        cov = cov + (VARIANCE_FLOOR - smallest) * np.eye(dim)
    return GaussianParams(mean=mean, covariance=cov, degenerate=degenerate)


def gaussian_log_density(params: GaussianParams, x: np.ndarray) -> np.ndarray:
    """Log-density of each row of ``x`` (a single vector gives a 1-element array)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != params.dim:
        raise DimensionMismatchError(params.dim, X.shape[1])
    diff = X - params.mean

    if params.mode == 'diagonal':
        var = params.covariance
        return -0.5 * (
            params.dim * _LOG_2PI
            + np.log(var).sum()
            + (diff**2 / var).sum(axis=1)
        )

    chol = linalg.cholesky(params.covariance, lower=True)
    soln = linalg.solve_triangular(chol, diff.T, lower=True)
    return (
        -0.5 * params.dim * _LOG_2PI
        - np.log(np.diag(chol)).sum()
        - 0.5 * (soln**2).sum(axis=0)
    )


def sample_gaussian(
    params: GaussianParams, rng: np.random.Generator, count: int
) -> np.ndarray:
    if params.mode == 'diagonal':
        noise = rng.standard_normal((count, params.dim))
        return params.mean + noise * np.sqrt(params.covariance)
    return rng.multivariate_normal(params.mean, params.covariance, size=count)


def linear_gaussian_log_marginal(
    W: np.ndarray, b: np.ndarray, sigma2: float, x: np.ndarray
) -> np.ndarray:
    """Exact log p(x) for z ~ N(0, I), x | z ~ N(W z + b, sigma2 I)."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).ravel()
    if sigma2 <= 0:
        raise ValueError(f'sigma2 must be positive, got {sigma2!r}')
    if W.shape[0] != b.shape[0]:
        raise DimensionMismatchError(b.shape[0], W.shape[0], what='decoder matrix')
    cov = W @ W.T + sigma2 * np.eye(b.shape[0])
    return gaussian_log_density(GaussianParams(mean=b, covariance=cov), x)
