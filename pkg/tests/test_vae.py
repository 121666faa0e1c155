import math

import numpy as np
import pytest

from memaudit import ConfigurationError, Dataset, EstimatorSpec, FitError
from memaudit._gaussian import linear_gaussian_log_marginal
from memaudit._numerics import finite_diff_gradient
from memaudit._vae import (
    VaeArchitecture,
    VaeModel,
    elbo_estimate,
    gaussian_kl,
    importance_log_marginal,
    init_parameters,
    pack_parameters,
    unpack_parameters,
    vae_elbo_gradient,
    vae_fit_checkpoints,
    vae_log_density,
    vae_options,
    vae_sample,
    vae_train,
)


def linear_model(rng, dim=3, sigma2=0.5, widen=0.0):
    """Linear decoder with its exact posterior as encoder; ``widen`` detunes it."""
    A = rng.normal(size=(dim, 1))
    b = rng.normal(size=dim)
    S = 1.0 / (1.0 + float(A[:, 0] @ A[:, 0]) / sigma2)
    gain = A[:, 0] * S / sigma2
    W_enc = np.column_stack([gain, np.zeros(dim)])
    b_enc = np.array([-float(b @ gain), 0.5 * math.log(S) + widen])
    arch = VaeArchitecture(
        input_dim=dim, latent_dim=1, hidden=(), likelihood='isotropic'
    )
    params = pack_parameters([(W_enc, b_enc)], [(A.T, b)], math.log(sigma2))
    return VaeModel(arch=arch, params=params), A, b, sigma2


def test_parameter_layout_round_trip(rng):
    arch = VaeArchitecture(
        input_dim=4, latent_dim=2, hidden=(5, 3), likelihood='gaussian'
    )
    params = init_parameters(arch, rng)
    assert params.shape == (arch.size,)
    encoder, decoder, log_gamma = unpack_parameters(arch, params)
    assert [W.shape for W, _ in encoder] == [(4, 5), (5, 3), (3, 4)]
    assert [W.shape for W, _ in decoder] == [(2, 3), (3, 5), (5, 8)]
    assert log_gamma is None
    np.testing.assert_array_equal(pack_parameters(encoder, decoder), params)


def test_gaussian_kl():
    assert gaussian_kl(np.zeros((1, 3)), np.zeros((1, 3)))[0] == 0.0
    assert gaussian_kl(np.ones((1, 1)), np.zeros((1, 1)))[0] == pytest.approx(0.5)


def test_gaussian_kl_matches_monte_carlo(rng):
    for _ in range(5):
        mu = rng.normal(size=(1, 2))
        log_sigma = rng.normal(scale=0.5, size=(1, 2))
        z = mu + np.exp(log_sigma) * rng.standard_normal((200_000, 2))
        log_q = (-0.5 * ((z - mu) / np.exp(log_sigma)) ** 2 - log_sigma).sum(axis=1)
        log_p = (-0.5 * z**2).sum(axis=1)
        diff = log_q - log_p
        se = diff.std(ddof=1) / math.sqrt(diff.size)
        assert abs(diff.mean() - gaussian_kl(mu, log_sigma)[0]) <= 3 * se + 1e-12


def test_elbo_below_marginal(rng):
    model, A, b, sigma2 = linear_model(rng, widen=0.2)
    X = rng.normal(size=(10, 3))
    exact = linear_gaussian_log_marginal(A, b, sigma2, X)
    draws = np.stack([elbo_estimate(model, X, 1, rng) for _ in range(400)])
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    assert (draws.mean(axis=0) <= exact + 3 * se).all()
    with pytest.raises(ConfigurationError):
        elbo_estimate(model, X, 0, rng)


def test_importance_single_sample_with_exact_posterior(rng):
    model, A, b, sigma2 = linear_model(rng)
    X = rng.normal(size=(5, 3))
    estimate = importance_log_marginal(model, X, 1, rng)
    np.testing.assert_allclose(
        estimate.log_marginal, linear_gaussian_log_marginal(A, b, sigma2, X), atol=1e-9
    )


def test_importance_sampling_matches_closed_form(rng):
    model, A, b, sigma2 = linear_model(rng, widen=0.3)
    X = rng.normal(size=(20, 3))
    estimate = importance_log_marginal(model, X, 10_000, rng)
    exact = linear_gaussian_log_marginal(A, b, sigma2, X)
    assert np.abs(estimate.log_marginal - exact).max() < 0.05
    assert (estimate.standard_error < 0.05).all()


def test_importance_estimate_grows_with_samples():
    rng = np.random.default_rng(0)
    model, _, _, _ = linear_model(rng, widen=0.5)
    X = rng.normal(size=(20, 3))
    few = [
        importance_log_marginal(model, X, 1, np.random.default_rng(s))
        for s in range(30)
    ]
    many = [
        importance_log_marginal(model, X, 64, np.random.default_rng(100 + s))
        for s in range(30)
    ]
    few_mean = np.mean([e.log_marginal for e in few])
    many_mean = np.mean([e.log_marginal for e in many])
    assert few_mean < many_mean


@pytest.mark.parametrize('seed', range(10))
def test_elbo_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    likelihood = ('bernoulli', 'gaussian', 'isotropic')[seed % 3]
    hidden = {'bernoulli': (4,), 'gaussian': (2,), 'isotropic': (3,)}[likelihood]
    arch = VaeArchitecture(
        input_dim=3, latent_dim=1, hidden=hidden, likelihood=likelihood
    )
    assert arch.size <= 50
    model = VaeModel(arch=arch, params=init_parameters(arch, rng))
    if likelihood == 'bernoulli':
        x = rng.integers(0, 2, size=(4, 3)).astype(np.float64)
    else:
        x = rng.normal(size=(4, 3))
    noise = rng.standard_normal((4, 1))

    _, grad = vae_elbo_gradient(model, x, noise)
    numeric = finite_diff_gradient(
        lambda p: vae_elbo_gradient(model.with_params(p), x, noise)[0],
        model.params,
        h=1e-5,
    )
    scale = max(np.linalg.norm(grad), np.linalg.norm(numeric))
    assert np.linalg.norm(grad - numeric) / scale <= 1e-4


def _clusters(seed, n=200):
    rng = np.random.default_rng(seed)
    centres = np.where(rng.random(n) < 0.5, -3.0, 3.0)
    X = np.column_stack([centres, np.zeros(n)]) + rng.normal(scale=0.5, size=(n, 2))
    return Dataset.from_array(X)


def test_zero_epochs_returns_initialization():
    spec = EstimatorSpec.build('vae', epochs=0, hidden=(4,), latent_dim=1)
    model = vae_train(_clusters(0), spec, seed=9)
    arch = VaeArchitecture(
        input_dim=2, latent_dim=1, hidden=(4,), likelihood='gaussian'
    )
    np.testing.assert_array_equal(
        model.params, init_parameters(arch, np.random.default_rng(9))
    )
    assert model.epoch == 0
    assert model.history == ()


def test_training_is_deterministic():
    spec = EstimatorSpec.build('vae', epochs=3, hidden=(8,), batch_size=32)
    data = _clusters(1, n=80)
    a = vae_train(data, spec, seed=4)
    b = vae_train(data, spec, seed=4)
    np.testing.assert_array_equal(a.params, b.params)
    assert a.history == b.history
    np.testing.assert_array_equal(
        vae_log_density(a, data.observations[:5]),
        vae_log_density(b, data.observations[:5]),
    )


def test_checkpoints_do_not_perturb_training():
    spec = EstimatorSpec.build('vae', epochs=4, hidden=(8,), batch_size=32)
    data = _clusters(2, n=64)
    models = vae_fit_checkpoints(data, spec, 3, checkpoints=(0, 2, 4))
    assert [m.epoch for m in models] == [0, 2, 4, 4]
    np.testing.assert_array_equal(models[2].params, models[3].params)
    np.testing.assert_array_equal(models[3].params, vae_train(data, spec, 3).params)
    assert len(models[1].history) == 2
    with pytest.raises(ConfigurationError):
        vae_fit_checkpoints(data, spec, 3, checkpoints=(5,))


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_training_improves_elbo(seed):
    spec = EstimatorSpec.build(
        'vae', epochs=50, hidden=(16, 16), learning_rate=1e-2
    )
    model = vae_train(_clusters(seed), spec, seed=seed)
    assert len(model.history) == 50
    assert model.history[-1] > model.history[0]


def test_sampling(rng):
    arch = VaeArchitecture(
        input_dim=5, latent_dim=2, hidden=(4,), likelihood='bernoulli'
    )
    model = VaeModel(arch=arch, params=init_parameters(arch, rng))
    samples = vae_sample(model, np.random.default_rng(1), 30)
    assert samples.shape == (30, 5)
    assert set(np.unique(samples)) <= {0.0, 1.0}
    again = vae_sample(model, np.random.default_rng(1), 30)
    np.testing.assert_array_equal(samples, again)
    with pytest.raises(ConfigurationError):
        vae_sample(model, rng, 0)


def test_grey_images_use_fixed_dither_and_logit():
    rng = np.random.default_rng(5)
    pixels = rng.integers(0, 256, size=(40, 16)) / 255.0
    data = Dataset.from_array(pixels, shape_tag=(4, 4, 1))

    spec = EstimatorSpec.build('vae', epochs=1, likelihood='bernoulli', hidden=(8,))
    binary = vae_train(data, spec, seed=0)
    assert binary.transform == 'binarize'
    assert binary.dither.shape == (16,)
    assert np.isfinite(vae_log_density(binary, pixels[:3])).all()

    spec = EstimatorSpec.build('vae', epochs=1, likelihood='gaussian', hidden=(8,))
    logit = vae_train(data, spec, seed=0)
    assert logit.transform == 'logit'
    assert np.isfinite(vae_log_density(logit, pixels[:3])).all()
    samples = vae_sample(logit, rng, 6)
    assert samples.min() >= 0.0 and samples.max() <= 1.0


def test_bernoulli_rejects_data_outside_unit_interval():
    spec = EstimatorSpec.build('vae', epochs=1, likelihood='bernoulli')
    with pytest.raises(FitError):
        vae_train(_clusters(0, n=10), spec, seed=0)


def test_vae_options():
    assert vae_options(EstimatorSpec.build('vae'))['importance_samples'] == 128
    with pytest.raises(ConfigurationError):
        vae_options(EstimatorSpec.build('vae', depth=3))
    with pytest.raises(ConfigurationError):
        vae_options(EstimatorSpec.build('vae', likelihood='poisson'))
