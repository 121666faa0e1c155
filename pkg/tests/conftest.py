import numpy as np
import pytest

from memaudit import Dataset, EstimatorSpec, MemorizationResult
from memaudit._helpers import summary_statistics


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def points2d():
    rng = np.random.default_rng(7)
    return Dataset.from_array(rng.normal(size=(50, 2)), name='points2d')


@pytest.fixture
def line1d():
    return Dataset.from_array([0.0, 1.0, 2.0], name='line1d')


@pytest.fixture
def kde_spec():
    return EstimatorSpec.build('kde', bandwidth=0.5)


@pytest.fixture
def gaussian_spec():
    return EstimatorSpec.build('gaussian-mle', mode='diagonal')


@pytest.fixture
def constant_spec():
    return EstimatorSpec.build('constant', log_density=-3.0)


@pytest.fixture
def make_result():
    """Scores wrapped as a MemorizationResult with U = M and V = 0."""

    def build(values, ids=None, flagged=None):
        M = np.asarray(values, dtype=np.float64)
        flags = (
            np.zeros(M.size, dtype=bool)
            if flagged is None
            else np.asarray(flagged, dtype=bool)
        )
        return MemorizationResult(
            ids=np.arange(M.size) if ids is None else np.asarray(ids),
            U=M,
            V=np.zeros_like(M),
            M=M,
            noise_floor=np.full(M.size, np.nan),
            flagged=flags,
            summary=summary_statistics(M[~flags]),
            spec_hash='',
        )

    return build
