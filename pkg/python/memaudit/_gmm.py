from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import logsumexp

from ._core import Dataset
from ._errors import ConfigurationError, DimensionMismatchError
from ._gaussian import VARIANCE_FLOOR

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2 * math.pi)

# a component whose responsibility mass falls below this is treated as empty
_EMPTY_MASS = 1e-10


@dataclass(frozen=True, eq=False)
class GmmParams:
    weights: np.ndarray  # (m,)
    means: np.ndarray  # (m, D)
    variances: np.ndarray  # (m, D), diagonal covariances
    log_likelihoods: Tuple[float, ...] = ()
    reinitialized: int = 0
    converged: bool = False

    @property
    def components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _component_log_probs(
    X: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> np.ndarray:
    """(n, m) matrix of log w_c + log N(x | mu_c, diag(var_c))."""
    diff2 = (X[:, None, :] - means[None, :, :]) ** 2
    quad = (diff2 / variances[None, :, :]).sum(axis=2)
    log_norm = -0.5 * (X.shape[1] * _LOG_2PI + np.log(variances).sum(axis=1))
    with np.errstate(divide='ignore'):
        log_w = np.log(weights)
    return log_w[None, :] + log_norm[None, :] - 0.5 * quad


def fit_gmm_em(
    data: Dataset,
    components: int,
    seed: int,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> GmmParams:
    X = data.observations
    n, dim = X.shape
    if not 1 <= components <= n:
        raise ConfigurationError(
            f'need 1 <= m <= n components, got m={components}, n={n}'
        )
    rng = np.random.default_rng(seed)

    weights = np.full(components, 1.0 / components)
    means = X[rng.choice(n, size=components, replace=False)].copy()
    variances = np.tile(np.maximum(X.var(axis=0), VARIANCE_FLOOR), (components, 1))

    history = []
    reinitialized = 0
    converged = False
    for iteration in range(max_iters):
        # E-step in log space
        log_probs = _component_log_probs(X, weights, means, variances)
        log_norm = logsumexp(log_probs, axis=1)
        ll = float(log_norm.sum())
        if history and ll - history[-1] < tol:
            history.append(ll)
            converged = True
            break
        history.append(ll)
        resp = np.exp(log_probs - log_norm[:, None])

        # M-step
        mass = resp.sum(axis=0)
        for c in np.flatnonzero(mass < _EMPTY_MASS):
            logger.warning(
                'EM component %d emptied at iteration %d, re-seeding', c, iteration
            )
            reinitialized += 1
            resp[:, c] = 0.0
            resp[rng.integers(n), c] = 1.0
            mass[c] = 1.0
        weights = mass / mass.sum()
        means = (resp.T @ X) / mass[:, None]
        for c in range(components):
            centred = X - means[c]
            variances[c] = (resp[:, c][:, None] * centred**2).sum(axis=0) / mass[c]
        variances = np.maximum(variances, VARIANCE_FLOOR)

    return GmmParams(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihoods=tuple(history),
        reinitialized=reinitialized,
        converged=converged,
    )


def gmm_log_density(params: GmmParams, x: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != params.dim:
        raise DimensionMismatchError(params.dim, X.shape[1])
    return logsumexp(
        _component_log_probs(X, params.weights, params.means, params.variances), axis=1
    )


def sample_gmm(params: GmmParams, rng: np.random.Generator, count: int) -> np.ndarray:
    which = rng.choice(params.components, size=count, p=params.weights)
    noise = rng.standard_normal((count, params.dim))
    return params.means[which] + noise * np.sqrt(params.variances[which])
