from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from ._errors import ConfigurationError, NumericError

DEFAULT_ALPHA = 1e-6

_LOG_SCALE = math.log(255 / 256)


def _check_unit_interval(x: np.ndarray) -> None:
    if (x < 0).any() or (x > 1).any():
        raise NumericError('pixel values must lie in [0, 1]')


def binarize_dynamic(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Each pixel becomes an independent Bernoulli draw with its grey value."""
    x = np.asarray(x, dtype=np.float64)
    _check_unit_interval(x)
    return (rng.random(x.shape) < x).astype(np.float64)


def binarize_fixed(x: np.ndarray, dither: np.ndarray) -> np.ndarray:
    """Binarize against a fixed per-pixel dither, the same for every row."""
    x = np.asarray(x, dtype=np.float64)
    _check_unit_interval(x)
    return (dither < x).astype(np.float64)


def check_alpha(alpha: float) -> None:
    if not 0 < alpha < 0.5:
        raise ConfigurationError(f'alpha must lie in (0, 0.5), got {alpha!r}')


def dequantize_logit(
    x: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    rng: Optional[np.random.Generator] = None,
    u: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform dequantization followed by the logit transform.

    ``y = logit(alpha + (1 - 2 alpha) * (255 x + u) / 256)``. Returns ``y`` and
    the per-row sum of ``log |dy/dx|``, so ``log p_x = log p_y + logdet``.
    """
    check_alpha(alpha)
    x = np.asarray(x, dtype=np.float64)
    if u is None:
        if rng is None:
            raise ValueError('either rng or u is required')
        u = rng.random(x.shape)
    v = (255.0 * x + u) / 256.0
    s = alpha + (1 - 2 * alpha) * v
    y = logit(s)
    # dv/dx = 255/256
    log_deriv = _LOG_SCALE + np.log1p(-2 * alpha) - np.log(s) - np.log1p(-s)
    logdet = log_deriv.sum(axis=-1) if log_deriv.ndim > 1 else log_deriv.sum()
    return y, logdet


def inverse_dequantize_logit(
    y: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    u: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Inverse of dequantize_logit; without ``u`` returns the dequantized pixel v."""
    check_alpha(alpha)
    v = (expit(np.asarray(y, dtype=np.float64)) - alpha) / (1 - 2 * alpha)
    if u is None:
        return v
    return (256.0 * v - u) / 255.0
