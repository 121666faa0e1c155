from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.spatial.distance import cdist

from ._core import Dataset
from ._errors import ConfigurationError, DimensionMismatchError
from ._gaussian import VARIANCE_FLOOR
from ._numerics import log_mean_exp_axis

# rows evaluated per block when computing kernel matrices
_BLOCK = 2048

Bandwidth = Union[float, Literal['silverman']]


@dataclass(frozen=True, eq=False)
class KdeParams:
    points: np.ndarray
    bandwidth: float

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def silverman_bandwidth(X: np.ndarray) -> float:
    """Silverman's factor per dimension, geometric mean across dimensions."""
    n = X.shape[0]
    if n < 2:
        sigma = np.ones(X.shape[1])
    else:
        sigma = X.std(axis=0, ddof=1)
    per_dim = 1.06 * np.maximum(sigma, math.sqrt(VARIANCE_FLOOR)) * n ** (-1 / 5)
    return float(np.exp(np.log(per_dim).mean()))


def fit_kde(data: Dataset, bandwidth: Bandwidth = 'silverman') -> KdeParams:
    if bandwidth == 'silverman':
        h = silverman_bandwidth(data.observations)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ConfigurationError(f'bandwidth must be positive, got {bandwidth!r}')
    return KdeParams(points=np.array(data.observations), bandwidth=h)


def kde_log_kernels(params: KdeParams, x: np.ndarray) -> np.ndarray:
    """(m, n) matrix of Gaussian kernel log-densities between rows and points."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != params.dim:
        raise DimensionMismatchError(params.dim, X.shape[1])
    h2 = params.bandwidth**2
    norm = -0.5 * params.dim * math.log(2 * math.pi * h2)
    return norm - cdist(X, params.points, 'sqeuclidean') / (2 * h2)


def kde_log_density(params: KdeParams, x: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], _BLOCK):
        block = kde_log_kernels(params, X[start : start + _BLOCK])
        out[start : start + _BLOCK] = log_mean_exp_axis(block, axis=1)
    return out


def sample_kde(params: KdeParams, rng: np.random.Generator, count: int) -> np.ndarray:
    centres = params.points[rng.integers(0, params.points.shape[0], size=count)]
    return centres + params.bandwidth * rng.standard_normal(centres.shape)
