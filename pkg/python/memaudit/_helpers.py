"""
Shared plumbing: the fit scheduler and score summaries.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, Hashable, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from scipy.stats import skew

from ._errors import ConfigurationError, FitError, NumericError
from ._numerics import quantile
from ._types import SummaryStatistics

logger = logging.getLogger(__name__)

K = TypeVar('K', bound=Hashable)
R = TypeVar('R')

ProgressSink = Callable[[int, int], None]

PERCENTILES: Tuple[int, ...] = (5, 25, 50, 75, 95, 99)

# failures that mark a single fit as aborted; anything else propagates
FIT_FAILURES = (FitError, NumericError, np.linalg.LinAlgError, FloatingPointError)


def run_jobs(
    keys: Sequence[K],
    job: Callable[[K], R],
    workers: int = 1,
    progress: Optional[ProgressSink] = None,
) -> Dict[K, Union[R, Exception]]:
    """Run ``job`` for every key; results are keyed, never ordered by completion.

    A job that raises one of ``FIT_FAILURES`` stores the exception under its
    key. Other exceptions are configuration or programming errors and
    propagate.
    """
    if workers < 1:
        raise ConfigurationError(f'workers must be >= 1, got {workers}')
    total = len(keys)
    results: Dict[K, Union[R, Exception]] = {}

    def call(key: K) -> Union[R, Exception]:
        try:
            return job(key)
        except FIT_FAILURES as e:
            logger.warning('fit %s failed: %s', key, e)
            return e

    if workers == 1:
        for done, key in enumerate(keys, 1):
            results[key] = call(key)
            if progress is not None:
                progress(done, total)
        return results

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(call, key): key for key in keys}
        for done, future in enumerate(as_completed(futures), 1):
            results[futures[future]] = future.result()
            if progress is not None:
                progress(done, total)
    return results


def summary_statistics(values: np.ndarray) -> SummaryStatistics:
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        raise NumericError('no finite scores to summarize')
    if np.ptp(arr) == 0:
        skewness = 0.0
    else:
        skewness = float(skew(arr))
    return {
        'count': int(arr.size),
        'mean': float(arr.mean()),
        'median': quantile(arr, 0.5),
        'skewness': skewness,
        'percentiles': {str(p): quantile(arr, p / 100) for p in PERCENTILES},
    }
