import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from memaudit import ConfigurationError, Dataset, DimensionMismatchError, FitError
from memaudit._gaussian import (
    VARIANCE_FLOOR,
    GaussianParams,
    fit_gaussian_mle,
    gaussian_log_density,
    linear_gaussian_log_marginal,
    sample_gaussian,
)
from memaudit._gmm import fit_gmm_em, gmm_log_density, sample_gmm
from memaudit._kde import (
    fit_kde,
    kde_log_density,
    kde_log_kernels,
    sample_kde,
    silverman_bandwidth,
)


def _integral_1d(log_density, low=-12.0, high=12.0, size=20001):
    grid = np.linspace(low, high, size)
    return trapezoid(np.exp(log_density(grid[:, None])), grid)


def _integral_2d(log_density, low=-10.0, high=10.0, size=401):
    axis = np.linspace(low, high, size)
    xx, yy = np.meshgrid(axis, axis, indexing='ij')
    values = np.exp(log_density(np.column_stack([xx.ravel(), yy.ravel()])))
    return trapezoid(trapezoid(values.reshape(size, size), axis, axis=1), axis)


def test_gaussian_mle_closed_form(line1d):
    params = fit_gaussian_mle(line1d)
    assert params.mean.tolist() == [1.0]
    assert params.covariance[0] == pytest.approx(2 / 3)
    assert not params.degenerate


def test_gaussian_mle_degenerate():
    data = Dataset.from_array([[1.0, 2.0]] * 4)
    params = fit_gaussian_mle(data)
    assert params.mean.tolist() == [1.0, 2.0]
    assert params.covariance.tolist() == [VARIANCE_FLOOR, VARIANCE_FLOOR]
    assert params.degenerate

    full = fit_gaussian_mle(data, 'full')
    assert full.degenerate
    assert np.linalg.eigvalsh(full.covariance).min() >= VARIANCE_FLOOR * 0.999


def test_gaussian_mle_monte_carlo(rng):
    data = Dataset.from_array(rng.standard_normal((10_000, 2)))
    params = fit_gaussian_mle(data)
    np.testing.assert_allclose(params.mean, 0.0, atol=0.05)
    np.testing.assert_allclose(params.covariance, 1.0, atol=0.1)


def test_gaussian_full_needs_more_rows_than_dims():
    data = Dataset.from_array(np.eye(3))
    with pytest.raises(FitError):
        fit_gaussian_mle(data, 'full')


def test_gaussian_log_density():
    standard = GaussianParams(mean=np.zeros(1), covariance=np.ones(1))
    assert gaussian_log_density(standard, [0.0])[0] == pytest.approx(
        -0.5 * math.log(2 * math.pi)
    )
    for mu in (-3.0, 0.0, 7.5):
        shifted = GaussianParams(mean=np.array([mu, mu]), covariance=np.ones(2))
        assert gaussian_log_density(shifted, [mu, mu])[0] == pytest.approx(
            -math.log(2 * math.pi)
        )
    d = 5
    full = GaussianParams(mean=np.zeros(d), covariance=np.eye(d))
    assert gaussian_log_density(full, np.zeros(d))[0] == pytest.approx(
        -0.5 * d * math.log(2 * math.pi)
    )
    with pytest.raises(DimensionMismatchError):
        gaussian_log_density(standard, [0.0, 1.0])


def test_gaussian_full_matches_diagonal(rng):
    X = rng.normal(size=(5, 3))
    var = np.array([0.5, 2.0, 1.5])
    diagonal = GaussianParams(mean=np.ones(3), covariance=var)
    full = GaussianParams(mean=np.ones(3), covariance=np.diag(var))
    np.testing.assert_allclose(
        gaussian_log_density(diagonal, X), gaussian_log_density(full, X), rtol=1e-12
    )


def test_gaussian_integrates_to_one(rng):
    data = Dataset.from_array(rng.normal(1.0, 2.0, size=(200, 1)))
    params = fit_gaussian_mle(data)
    assert _integral_1d(lambda x: gaussian_log_density(params, x), -20, 20) == (
        pytest.approx(1.0, abs=1e-2)
    )


def test_gaussian_sampling_shape(rng):
    params = GaussianParams(mean=np.zeros(3), covariance=np.ones(3))
    assert sample_gaussian(params, rng, 7).shape == (7, 3)


def test_kde_single_point():
    data = Dataset.from_array([[0.5, -1.0], [0.5, -1.0]])
    params = fit_kde(data, bandwidth=1.0)
    value = kde_log_density(params, [0.5, -1.0])[0]
    assert value == pytest.approx(-math.log(2 * math.pi))


def test_kde_silverman(rng):
    X = rng.standard_normal((100, 1))
    sigma = X.std(ddof=1)
    assert silverman_bandwidth(X) == pytest.approx(1.06 * sigma * 100 ** (-1 / 5))
    params = fit_kde(Dataset.from_array(X))
    assert params.bandwidth == pytest.approx(silverman_bandwidth(X))


def test_kde_duplicated_rows_leave_density_unchanged(rng):
    X = rng.normal(size=(20, 2))
    once = fit_kde(Dataset.from_array(X), 0.7)
    twice = fit_kde(Dataset.from_array(np.vstack([X, X])), 0.7)
    query = rng.normal(size=(6, 2))
    np.testing.assert_allclose(
        kde_log_density(once, query), kde_log_density(twice, query), rtol=1e-12
    )


def test_kde_symmetric_points():
    params = fit_kde(Dataset.from_array([[-1.0], [1.0]]), 0.5)
    kernel = kde_log_kernels(params, [[0.0]])[0, 0]
    assert kde_log_density(params, [[0.0]])[0] == pytest.approx(kernel)


def test_kde_leave_one_out_identity(rng):
    X = rng.normal(size=(30, 2))
    n = X.shape[0]
    full = fit_kde(Dataset.from_array(X), 0.6)
    log_full = kde_log_density(full, X)
    log_self = kde_log_kernels(full, X[:1])[0, 0]
    for i in (0, 7, 29):
        rest = fit_kde(Dataset.from_array(np.delete(X, i, axis=0)), 0.6)
        refit = kde_log_density(rest, X[i])[0]
        identity = math.log(
            n / (n - 1) * (math.exp(log_full[i]) - math.exp(log_self) / n)
        )
        assert refit == pytest.approx(identity, abs=1e-9)


def test_kde_bandwidth_errors():
    data = Dataset.from_array([[0.0], [1.0]])
    with pytest.raises(ConfigurationError):
        fit_kde(data, 0.0)
    with pytest.raises(DimensionMismatchError):
        kde_log_density(fit_kde(data, 1.0), [[0.0, 1.0]])


def test_kde_integrates_to_one(rng):
    params = fit_kde(Dataset.from_array(rng.normal(size=(40, 2))), 0.8)
    assert _integral_2d(lambda x: kde_log_density(params, x)) == pytest.approx(
        1.0, abs=1e-2
    )
    assert sample_kde(params, rng, 11).shape == (11, 2)


def test_gmm_single_component_is_gaussian(rng):
    data = Dataset.from_array(rng.normal(size=(60, 2)))
    gmm = fit_gmm_em(data, 1, seed=0)
    gauss = fit_gaussian_mle(data)
    np.testing.assert_allclose(gmm.means[0], gauss.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(gmm.variances[0], gauss.covariance, rtol=1e-10)
    np.testing.assert_allclose(
        gmm_log_density(gmm, data.observations),
        gaussian_log_density(gauss, data.observations),
        rtol=1e-10,
    )


def test_gmm_separated_clusters(rng):
    X = np.concatenate([rng.normal(-10, 1, 100), rng.normal(10, 1, 100)])
    gmm = fit_gmm_em(Dataset.from_array(X), 2, seed=3)
    np.testing.assert_allclose(np.sort(gmm.means[:, 0]), [-10, 10], atol=0.5)
    assert gmm.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert (np.diff(gmm.log_likelihoods) >= -1e-9).all()


def test_gmm_deterministic_and_normalized(rng):
    data = Dataset.from_array(rng.normal(size=(80, 1)))
    a = fit_gmm_em(data, 3, seed=5)
    b = fit_gmm_em(data, 3, seed=5)
    np.testing.assert_array_equal(a.means, b.means)
    assert (a.variances >= VARIANCE_FLOOR).all()
    assert _integral_1d(lambda x: gmm_log_density(a, x)) == pytest.approx(
        1.0, abs=1e-2
    )
    assert sample_gmm(a, rng, 9).shape == (9, 1)


def test_gmm_component_count():
    with pytest.raises(ConfigurationError):
        fit_gmm_em(Dataset.from_array([[0.0], [1.0]]), 3, seed=0)


def test_linear_gaussian_marginal():
    b = np.array([0.3, -0.2])
    x = np.array([[1.0, 0.5]])
    expected = gaussian_log_density(
        GaussianParams(mean=b, covariance=np.full(2, 0.7)), x
    )
    np.testing.assert_allclose(
        linear_gaussian_log_marginal(np.zeros((2, 1)), b, 0.7, x), expected
    )
    value = linear_gaussian_log_marginal([[1.0]], [0.0], 1.0, [[0.0]])[0]
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi * 2))


def test_linear_gaussian_marginal_quadrature(rng):
    W = rng.normal(size=(2, 1))
    b = rng.normal(size=2)
    sigma2 = 0.4
    x = rng.normal(size=2)
    z = np.linspace(-10, 10, 20001)
    mean = z[:, None] * W[:, 0] + b
    log_joint = (
        -0.5 * ((x - mean) ** 2).sum(axis=1) / sigma2
        - math.log(2 * math.pi * sigma2)
        - 0.5 * z**2
        - 0.5 * math.log(2 * math.pi)
    )
    numeric = math.log(trapezoid(np.exp(log_joint), z))
    assert linear_gaussian_log_marginal(W, b, sigma2, x)[0] == pytest.approx(
        numeric, abs=1e-3
    )
