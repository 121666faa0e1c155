"""
Log-space reductions, the Adam update, quantiles and the finite-difference
gradient oracle.

Densities stay in log space end to end; nothing here materializes raw
probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from ._errors import NumericError, DimensionMismatchError

ArrayLike = Union[Sequence[float], np.ndarray]


def _as_values(values: ArrayLike) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise NumericError('cannot reduce an empty collection')
    if np.isnan(arr).any():
        raise NumericError('NaN entry in log-space reduction')
    return arr


def log_sum_exp(values: ArrayLike) -> float:
    """log(sum(exp(v))) with max-shift stabilization; all -inf gives -inf."""
    arr = _as_values(values)
    return float(logsumexp(arr))


def log_mean_exp(values: ArrayLike) -> float:
    arr = _as_values(values)
    return float(logsumexp(arr) - math.log(arr.size))


def log_mean_exp_axis(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorized log_mean_exp along one axis, no validation."""
    values = np.asarray(values, dtype=np.float64)
    return logsumexp(values, axis=axis) - math.log(values.shape[axis])


def masked_log_mean_exp(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-mean-exp over the entries selected by ``mask``.

    Each row is sorted before reducing, so the result does not depend on the
    order of the entries. Rows without any selected entry give NaN.
    """
    selected = np.where(mask, values, -np.inf)
    selected = np.sort(selected, axis=1)
    counts = mask.sum(axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        lse = logsumexp(selected, axis=1)
        out = lse - np.log(np.maximum(counts, 1))
    out[counts == 0] = np.nan
    return out


@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(
        cls,
        size: int,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> OptimizerState:
        return cls(
            m=np.zeros(size),
            v=np.zeros(size),
            t=0,
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam descent step.

    Callers maximizing an objective pass the negated ascent gradient.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise DimensionMismatchError(params.size, grads.size, what='gradient')
    if state.m.shape != params.shape:
        raise DimensionMismatchError(params.size, state.m.size, what='optimizer state')

    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    x: ArrayLike,
    h: float = 1e-5,
) -> np.ndarray:
    if h <= 0:
        raise NumericError(f'step must be positive, got {h!r}')
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step.flat[j] = h
        upper = float(f(x + step))
        lower = float(f(x - step))
        if not (math.isfinite(upper) and math.isfinite(lower)):
            raise NumericError(f'non-finite function value near coordinate {j}')
        grad.flat[j] = (upper - lower) / (2 * h)
    return grad


def quantile(values: ArrayLike, q: float) -> float:
    """Linear interpolation between order statistics at rank q(n-1)."""
    if not 0.0 <= q <= 1.0:
        raise NumericError(f'quantile level must lie in [0, 1], got {q!r}')
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise NumericError('quantile of an empty collection')
    return float(np.quantile(arr, q, method='linear'))


def standard_error(values: ArrayLike) -> Optional[float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return None
    return float(np.std(arr, ddof=1) / math.sqrt(arr.size))


def log_mean_exp_stderr(log_values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Delta-method standard error of log(mean(exp(v))) over ``axis``.

    With w = exp(v - logmeanexp(v)), se = std(w, ddof=1) / sqrt(T).
    """
    log_values = np.asarray(log_values, dtype=np.float64)
    count = log_values.shape[axis]
    if count < 2:
        return np.full(np.delete(log_values.shape, axis), np.nan)
    centre = np.expand_dims(log_mean_exp_axis(log_values, axis=axis), axis)
    with np.errstate(invalid='ignore'):
        weights = np.exp(log_values - centre)
    return np.std(weights, axis=axis, ddof=1) / math.sqrt(count)


def width_bins(values: np.ndarray, width: float) -> Tuple[int, np.ndarray]:
    """Fixed-width bins aligned to multiples of ``width``.

    Returns the number of the first occupied bin and each value's zero-based
    offset from it. Bin b covers [(first + b) * width, (first + b + 1) * width).
    """
    numbers = np.floor(np.asarray(values, dtype=np.float64) / width).astype(np.int64)
    first = int(numbers.min())
    return first, numbers - first
