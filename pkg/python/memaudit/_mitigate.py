from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Mapping, Sequence, Union

import numpy as np

from ._core import Dataset, option_real
from ._errors import ConfigurationError, DimensionMismatchError, NumericError
from ._gaussian import GaussianParams, VARIANCE_FLOOR, gaussian_log_density
from ._types import Document, DpVerdict, OutlierOptions

if TYPE_CHECKING:
    from ._memscore import LooResult

logger = logging.getLogger(__name__)

DEFAULT_OUTLIER: OutlierOptions = {'weight': 0.01, 'variance_scale': 100.0}

CONVERSE_CAVEAT = (
    'a maximum score within epsilon does not imply the algorithm is '
    'epsilon-differentially private; the bound only holds in that direction, '
    'and the score is evaluated at x_i alone, assuming the largest density '
    'change from removing x_i occurs at x_i'
)

LogDensity = Callable[[np.ndarray], np.ndarray]


def _check_weight(w: float) -> None:
    if not 0.0 < w < 1.0:
        raise ConfigurationError(f'outlier weight must lie in (0, 1), got {w!r}')


def broad_component(data: Dataset, variance_scale: float = 100.0) -> GaussianParams:
    """Gaussian at the training mean with ``variance_scale`` times the data variance."""
    if variance_scale < 1.0:
        raise ConfigurationError(
            f'the broad component needs variance_scale >= 1, got {variance_scale!r}'
        )
    X = data.observations
    variance = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    return GaussianParams(mean=X.mean(axis=0), covariance=variance * variance_scale)


def with_outlier_component(
    base: LogDensity, w: float, broad: GaussianParams
) -> LogDensity:
    """log p'(x) = logsumexp(log(1-w) + log p(x), log w + log q0(x))."""
    _check_weight(w)
    log_keep, log_w = math.log1p(-w), math.log(w)

    def wrapped(x: np.ndarray) -> np.ndarray:
        base_lp = np.asarray(base(x), dtype=np.float64)
        broad_lp = gaussian_log_density(broad, x)
        return np.logaddexp(log_keep + base_lp, log_w + broad_lp)

    return wrapped


@dataclass(frozen=True, eq=False)
class OutlierMixture:
    base: Any  # fitted model of the base family
    broad: GaussianParams
    weight: float

    def __post_init__(self):
        _check_weight(self.weight)


@dataclass(frozen=True, eq=False)
class DpHistogram:
    edges: tuple  # one edge array per dimension
    masses: np.ndarray  # noisy normalized bin masses, shape (bins,) * D
    epsilon: float
    seed: int
    counts: np.ndarray  # exact counts, kept for diagnostics only

    @property
    def dim(self) -> int:
        return len(self.edges)

    def to_document(self) -> Document:
        return {
            'edges': [e.tolist() for e in self.edges],
            'masses': self.masses.ravel().tolist(),
            'shape': list(self.masses.shape),
            'epsilon': self.epsilon,
            'seed': self.seed,
        }


def histogram_edges(
    bins: int,
    low: Union[float, Sequence[float]],
    high: Union[float, Sequence[float]],
    dim: int,
) -> tuple:
    lows = np.broadcast_to(np.asarray(low, dtype=np.float64), (dim,))
    highs = np.broadcast_to(np.asarray(high, dtype=np.float64), (dim,))
    if (highs <= lows).any():
        raise ConfigurationError('histogram range needs high > low in every dimension')
    return tuple(np.linspace(lo, hi, bins + 1) for lo, hi in zip(lows, highs))


def fit_dp_histogram(
    data: Dataset, edges: Sequence[np.ndarray], epsilon: float, seed: int
) -> DpHistogram:
    """Laplace mechanism on bin counts (add/remove sensitivity 1).

    Negative noisy counts are clamped to zero and the result normalized;
    both are post-processing and keep the epsilon guarantee.
    """
    if not epsilon > 0:
        raise ConfigurationError(f'epsilon must be positive, got {epsilon!r}')
    X = data.observations
    edges = tuple(np.asarray(e, dtype=np.float64) for e in edges)
    if X.shape[1] not in (1, 2) or len(edges) != X.shape[1]:
        raise DimensionMismatchError(len(edges), X.shape[1], what='histogram data')
    for j, e in enumerate(edges):
        if (X[:, j] < e[0]).any() or (X[:, j] > e[-1]).any():
            raise NumericError(
                f'observation outside the histogram range [{e[0]}, {e[-1]}] in'
                f' dimension {j}; widen the range'
            )

    counts, _ = np.histogramdd(X, bins=edges)
    rng = np.random.default_rng(seed)
    noisy = np.maximum(counts + rng.laplace(0.0, 1.0 / epsilon, size=counts.shape), 0.0)
    total = noisy.sum()
    if total > 0:
        masses = noisy / total
    else:
        logger.warning('every noisy count clamped to zero, using uniform masses')
        masses = np.full(counts.shape, 1.0 / counts.size)
    return DpHistogram(
        edges=edges, masses=masses, epsilon=float(epsilon), seed=seed, counts=counts
    )


def _bin_volumes(hist: DpHistogram) -> np.ndarray:
    widths = [np.diff(e) for e in hist.edges]
    if hist.dim == 1:
        return widths[0]
    return np.outer(widths[0], widths[1])


def dp_histogram_log_density(hist: DpHistogram, x: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != hist.dim:
        raise DimensionMismatchError(hist.dim, X.shape[1])
    with np.errstate(divide='ignore'):
        log_dens = np.log(hist.masses) - np.log(_bin_volumes(hist))
    out = np.full(X.shape[0], -np.inf)
    inside = np.ones(X.shape[0], dtype=bool)
    index = []
    for j, e in enumerate(hist.edges):
        inside &= (X[:, j] >= e[0]) & (X[:, j] <= e[-1])
        # the closed upper edge belongs to the last bin, as in numpy.histogram
        position = np.searchsorted(e, X[:, j], side='right') - 1
        index.append(np.clip(position, 0, e.size - 2))
    out[inside] = log_dens[tuple(i[inside] for i in index)]
    return out


def sample_dp_histogram(
    hist: DpHistogram, rng: np.random.Generator, count: int
) -> np.ndarray:
    flat = rng.choice(hist.masses.size, size=count, p=hist.masses.ravel())
    cells = np.unravel_index(flat, hist.masses.shape)
    cols = []
    for e, cell in zip(hist.edges, cells):
        cols.append(e[cell] + rng.random(count) * (e[cell + 1] - e[cell]))
    return np.column_stack(cols)


def dp_bound_check(loo: LooResult, epsilon: float) -> DpVerdict:
    """max_i M_i <= epsilon + 3 SE, with the converse caveat attached."""
    if loo.repeats < 2:
        raise ConfigurationError(
            'the bound check needs T >= 2 repeats to estimate MC error,'
            f' got {loo.repeats}'
        )
    scores = np.asarray(loo.scores)
    i = int(np.nanargmax(scores))
    max_score = float(scores[i])
    se = float(loo.standard_errors[i])
    threshold = epsilon + 3.0 * se
    return {
        'epsilon': float(epsilon),
        'max_score': max_score,
        'standard_error': se,
        'argmax_id': int(loo.ids[i]),
        'threshold': threshold,
        'passed': bool(max_score <= threshold),
        'caveat': CONVERSE_CAVEAT,
    }


def outlier_options(options: Mapping[str, Any]) -> OutlierOptions:
    unknown = set(options) - set(DEFAULT_OUTLIER)
    if unknown:
        raise ConfigurationError(f'unknown outlier options: {sorted(unknown)}')
    merged: OutlierOptions = {**DEFAULT_OUTLIER, **options}  # type: ignore[misc]
    _check_weight(option_real('outlier', 'weight', merged['weight']))
    option_real('outlier', 'variance_scale', merged['variance_scale'], positive=True)
    return merged


def mixture_log_density(mixture: OutlierMixture, base_log_density: LogDensity, x):
    return with_outlier_component(base_log_density, mixture.weight, mixture.broad)(x)

