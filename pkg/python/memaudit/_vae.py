"""
Fully connected variational autoencoder in numpy with closed-form backprop.

Encoder ``x -> hidden... -> [mu, log_sigma]`` and decoder
``z -> reversed(hidden)... -> likelihood parameters``, rectified activations on
every hidden layer. All parameters live in one flat vector so the optimizer,
the gradient check and the model container see a single array.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp

from ._core import (
    Dataset,
    EstimatorSpec,
    option_choice,
    option_int,
    option_real,
)
from ._errors import ConfigurationError, DimensionMismatchError, FitError
from ._numerics import OptimizerState, adam_step, log_mean_exp_stderr
from ._preprocess import (
    DEFAULT_ALPHA,
    binarize_dynamic,
    binarize_fixed,
    check_alpha,
    dequantize_logit,
    inverse_dequantize_logit,
)
from ._types import Likelihood, VaeOptions

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2 * math.pi)

# decoder evaluations per block in importance sampling
_IS_BLOCK = 1 << 16

LIKELIHOODS = ('bernoulli', 'gaussian', 'isotropic')

VAE_DEFAULTS: VaeOptions = {
    'latent_dim': 2,
    'hidden': (32, 32),
    'likelihood': 'gaussian',
    'learning_rate': 1e-3,
    'batch_size': 64,
    'importance_samples': 128,
    'dynamic_binarization': True,
    'binarize_seed': 0,
    'alpha': DEFAULT_ALPHA,
}

Layer = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class VaeArchitecture:
    input_dim: int
    latent_dim: int
    hidden: Tuple[int, ...]
    likelihood: Likelihood

    @property
    def decoder_output(self) -> int:
        if self.likelihood == 'gaussian':
            return 2 * self.input_dim
        return self.input_dim

    def encoder_dims(self) -> List[int]:
        return [self.input_dim, *self.hidden, 2 * self.latent_dim]

    def decoder_dims(self) -> List[int]:
        return [self.latent_dim, *reversed(self.hidden), self.decoder_output]

    def layer_shapes(self) -> List[Tuple[int, int]]:
        shapes = []
        for dims in (self.encoder_dims(), self.decoder_dims()):
            shapes.extend(zip(dims[:-1], dims[1:]))
        return shapes

    @property
    def encoder_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def size(self) -> int:
        total = sum(a * b + b for a, b in self.layer_shapes())
        return total + (1 if self.likelihood == 'isotropic' else 0)


def unpack_parameters(
    arch: VaeArchitecture, params: np.ndarray
) -> Tuple[List[Layer], List[Layer], Optional[np.ndarray]]:
    """Views into ``params``: encoder layers, decoder layers, log gamma."""
    if params.shape != (arch.size,):
        raise DimensionMismatchError(arch.size, params.size, what='parameter vector')
    layers: List[Layer] = []
    offset = 0
    for fan_in, fan_out in arch.layer_shapes():
        W = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    log_gamma = params[offset : offset + 1] if arch.likelihood == 'isotropic' else None
    return layers[: arch.encoder_layers], layers[arch.encoder_layers :], log_gamma


def pack_parameters(
    encoder: Sequence[Layer],
    decoder: Sequence[Layer],
    log_gamma: Optional[float] = None,
) -> np.ndarray:
    parts = []
    for W, b in (*encoder, *decoder):
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    if log_gamma is not None:
        parts.append(np.array([log_gamma], dtype=np.float64))
    return np.concatenate(parts)


def init_parameters(arch: VaeArchitecture, rng: np.random.Generator) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in) for weights and biases, log gamma at 0."""
    parts = []
    for fan_in, fan_out in arch.layer_shapes():
        bound = 1.0 / math.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_out))
    if arch.likelihood == 'isotropic':
        parts.append(np.zeros(1))
    return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class VaeModel:
    arch: VaeArchitecture
    params: np.ndarray
    transform: str = 'none'  # 'none' | 'binarize' | 'logit'
    alpha: float = DEFAULT_ALPHA
    dither: Optional[np.ndarray] = None
    importance_samples: int = 128
    seed: int = 0
    epoch: int = 0
    history: Tuple[float, ...] = ()

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    @property
    def likelihood(self) -> Likelihood:
        return self.arch.likelihood

    def with_params(self, params: np.ndarray) -> VaeModel:
        return replace(self, params=np.asarray(params, dtype=np.float64))

    def prepare(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Evaluation-time input transform and its log-Jacobian per row."""
        X = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if X.shape[1] != self.arch.input_dim:
            raise DimensionMismatchError(self.arch.input_dim, X.shape[1])
        if self.transform == 'binarize':
            return binarize_fixed(X, self.dither), np.zeros(X.shape[0])
        if self.transform == 'logit':
            return dequantize_logit(X, self.alpha, u=np.full(X.shape, 0.5))
        return X, np.zeros(X.shape[0])


class _Cache(NamedTuple):
    inputs: List[np.ndarray]
    pre: List[np.ndarray]


def _mlp_forward(layers: Sequence[Layer], x: np.ndarray) -> Tuple[np.ndarray, _Cache]:
    inputs, pre = [], []
    h = x
    for i, (W, b) in enumerate(layers):
        inputs.append(h)
        a = h @ W + b
        pre.append(a)
        h = np.maximum(a, 0.0) if i < len(layers) - 1 else a
    return h, _Cache(inputs, pre)


def _mlp_backward(
    layers: Sequence[Layer], cache: _Cache, grad_out: np.ndarray
) -> Tuple[List[Layer], np.ndarray]:
    grads: List[Layer] = [None] * len(layers)  # type: ignore[list-item]
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (cache.pre[i] > 0)
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        g = g @ W.T
    return grads, g


def _decoder_log_lik(
    arch: VaeArchitecture,
    out: np.ndarray,
    x: np.ndarray,
    log_gamma: Optional[np.ndarray],
) -> np.ndarray:
    """log p(x | z) per row, given the decoder output for each row."""
    if arch.likelihood == 'bernoulli':
        return (x * out - np.logaddexp(0.0, out)).sum(axis=1)
    if arch.likelihood == 'gaussian':
        mean, logvar = out[:, : arch.input_dim], out[:, arch.input_dim :]
        quad = (x - mean) ** 2 * np.exp(-logvar)
        return -0.5 * (_LOG_2PI + logvar + quad).sum(axis=1)
    lg = float(log_gamma[0])
    sq = ((x - out) ** 2).sum(axis=1)
    return -0.5 * (arch.input_dim * (_LOG_2PI + lg) + sq * math.exp(-lg))


def _decoder_log_lik_grad(
    arch: VaeArchitecture,
    out: np.ndarray,
    x: np.ndarray,
    log_gamma: Optional[np.ndarray],
) -> Tuple[np.ndarray, float]:
    """d log p(x|z) / d decoder output, and d / d log gamma summed over rows."""
    if arch.likelihood == 'bernoulli':
        return x - expit(out), 0.0
    if arch.likelihood == 'gaussian':
        mean, logvar = out[:, : arch.input_dim], out[:, arch.input_dim :]
        inv = np.exp(-logvar)
        resid = x - mean
        return np.hstack([resid * inv, -0.5 + 0.5 * resid**2 * inv]), 0.0
    lg = float(log_gamma[0])
    resid = x - out
    inv = math.exp(-lg)
    g_lg = float((-0.5 * arch.input_dim + 0.5 * (resid**2).sum(axis=1) * inv).sum())
    return resid * inv, g_lg


def _split_encoder(
    arch: VaeArchitecture, out: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    return out[:, : arch.latent_dim], out[:, arch.latent_dim :]


def gaussian_kl(mu: np.ndarray, log_sigma: np.ndarray) -> np.ndarray:
    """KL(N(mu, sigma^2) || N(0, I)) per row, closed form."""
    return 0.5 * (np.exp(2 * log_sigma) + mu**2 - 1.0 - 2 * log_sigma).sum(axis=1)


def vae_elbo_gradient(
    model: VaeModel, x: np.ndarray, noise: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Mean single-sample ELBO over rows of ``x`` and its gradient.

    ``x`` is already in model space (binarized / logit). ``noise`` is the
    reparameterization draw, one row of latent noise per observation.
    """
    arch = model.arch
    encoder, decoder, log_gamma = unpack_parameters(arch, model.params)
    batch = x.shape[0]

    enc_out, enc_cache = _mlp_forward(encoder, x)
    mu, log_sigma = _split_encoder(arch, enc_out)
    sigma = np.exp(log_sigma)
    z = mu + sigma * noise

    dec_out, dec_cache = _mlp_forward(decoder, z)
    log_lik = _decoder_log_lik(arch, dec_out, x, log_gamma)
    elbo = log_lik - gaussian_kl(mu, log_sigma)

    g_out, g_log_gamma = _decoder_log_lik_grad(arch, dec_out, x, log_gamma)
    dec_grads, g_z = _mlp_backward(decoder, dec_cache, g_out)
    g_mu = g_z - mu
    g_log_sigma = g_z * sigma * noise - (sigma**2 - 1.0)
    enc_grads, _ = _mlp_backward(encoder, enc_cache, np.hstack([g_mu, g_log_sigma]))

    grad = pack_parameters(
        enc_grads, dec_grads, g_log_gamma if log_gamma is not None else None
    )
    return float(elbo.mean()), grad / batch


def elbo_estimate(
    model: VaeModel, x: np.ndarray, mc_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-row ELBO: closed-form KL and an MC average of log p(x | z)."""
    if mc_samples < 1:
        raise ConfigurationError(f'mc_samples must be >= 1, got {mc_samples}')
    arch = model.arch
    X, logdet = model.prepare(x)
    encoder, decoder, log_gamma = unpack_parameters(arch, model.params)
    mu, log_sigma = _split_encoder(arch, _mlp_forward(encoder, X)[0])
    total = np.zeros(X.shape[0])
    for _ in range(mc_samples):
        z = mu + np.exp(log_sigma) * rng.standard_normal(mu.shape)
        total += _decoder_log_lik(arch, _mlp_forward(decoder, z)[0], X, log_gamma)
    return total / mc_samples - gaussian_kl(mu, log_sigma) + logdet


class MarginalEstimate(NamedTuple):
    log_marginal: np.ndarray
    standard_error: np.ndarray


def importance_log_marginal(
    model: VaeModel, x: np.ndarray, samples: int, rng: np.random.Generator
) -> MarginalEstimate:
    """log p(x) ~= log mean_l p(x|z_l) p(z_l) / q(z_l|x), z_l ~ q(z|x)."""
    if samples < 1:
        raise ConfigurationError(f'importance samples must be >= 1, got {samples}')
    arch = model.arch
    X, logdet = model.prepare(x)
    encoder, decoder, log_gamma = unpack_parameters(arch, model.params)
    d = arch.latent_dim

    estimate = np.empty(X.shape[0])
    stderr = np.empty(X.shape[0])
    rows_per_block = max(1, _IS_BLOCK // samples)
    for start in range(0, X.shape[0], rows_per_block):
        xb = X[start : start + rows_per_block]
        m = xb.shape[0]
        mu, log_sigma = _split_encoder(arch, _mlp_forward(encoder, xb)[0])
        eps = rng.standard_normal((samples, m, d))
        z = mu[None] + np.exp(log_sigma)[None] * eps
        out = _mlp_forward(decoder, z.reshape(samples * m, d))[0]
        x_rep = np.broadcast_to(xb[None], (samples, m, xb.shape[1]))
        log_lik = _decoder_log_lik(
            arch, out, x_rep.reshape(samples * m, -1), log_gamma
        ).reshape(samples, m)
        log_prior = -0.5 * (z**2 + _LOG_2PI).sum(axis=2)
        log_q = -0.5 * (eps**2 + _LOG_2PI).sum(axis=2) - log_sigma.sum(axis=1)[None]
        log_w = log_lik + log_prior - log_q
        estimate[start : start + m] = logsumexp(log_w, axis=0) - math.log(samples)
        stderr[start : start + m] = log_mean_exp_stderr(log_w, axis=0)
    return MarginalEstimate(estimate + logdet, stderr)


def vae_log_density(model: VaeModel, x: np.ndarray) -> np.ndarray:
    """Importance-sampled log p(x), seeded from the fit so reruns agree."""
    rng = np.random.default_rng([model.seed, 0x15])
    return importance_log_marginal(model, x, model.importance_samples, rng).log_marginal


def vae_sample(model: VaeModel, rng: np.random.Generator, count: int) -> np.ndarray:
    if count < 1:
        raise ConfigurationError(f'sample count must be >= 1, got {count}')
    arch = model.arch
    _, decoder, log_gamma = unpack_parameters(arch, model.params)
    z = rng.standard_normal((count, arch.latent_dim))
    out = _mlp_forward(decoder, z)[0]
    D = arch.input_dim
    if arch.likelihood == 'bernoulli':
        return (rng.random((count, D)) < expit(out)).astype(np.float64)
    if arch.likelihood == 'gaussian':
        y = out[:, :D] + np.exp(0.5 * out[:, D:]) * rng.standard_normal((count, D))
    else:
        y = out + math.exp(0.5 * float(log_gamma[0])) * rng.standard_normal((count, D))
    if model.transform == 'logit':
        return np.clip(inverse_dequantize_logit(y, model.alpha), 0.0, 1.0)
    return y


def vae_options(spec: EstimatorSpec) -> Dict[str, Any]:
    unknown = set(spec.hyperparameters) - set(VAE_DEFAULTS)
    if unknown:
        raise ConfigurationError(f'unknown vae hyperparameters: {sorted(unknown)}')
    options = {**VAE_DEFAULTS, **spec.hyperparameters}
    option_choice('vae', 'likelihood', options['likelihood'], LIKELIHOODS)
    option_int('vae', 'latent_dim', options['latent_dim'], 1)
    hidden = options['hidden']
    if not isinstance(hidden, (list, tuple)):
        raise ConfigurationError(
            f'vae hidden must be a list of widths, got {hidden!r}'
        )
    for width in hidden:
        option_int('vae', 'hidden', width, 1)
    option_real('vae', 'learning_rate', options['learning_rate'], positive=True)
    option_int('vae', 'batch_size', options['batch_size'], 1)
    option_int('vae', 'importance_samples', options['importance_samples'], 1)
    option_int('vae', 'binarize_seed', options['binarize_seed'])
    if not isinstance(options['dynamic_binarization'], bool):
        raise ConfigurationError('vae dynamic_binarization must be true or false')
    check_alpha(option_real('vae', 'alpha', options['alpha']))
    return options


def _select_transform(data: Dataset, options: Mapping[str, Any]) -> str:
    X = data.observations
    if options['likelihood'] == 'bernoulli':
        if ((X < 0) | (X > 1)).any():
            raise FitError('a Bernoulli decoder needs data in [0, 1]', family='vae')
        binary = bool(np.isin(X, (0.0, 1.0)).all())
        return 'binarize' if options['dynamic_binarization'] and not binary else 'none'
    return 'logit' if data.is_image else 'none'


def _train_batch(
    model: VaeModel, X: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    if model.transform == 'binarize':
        return binarize_dynamic(X, rng)
    if model.transform == 'logit':
        return dequantize_logit(X, model.alpha, rng=rng)[0]
    return X


def vae_fit_checkpoints(
    data: Dataset,
    spec: EstimatorSpec,
    seed: int,
    checkpoints: Sequence[int] = (),
) -> List[VaeModel]:
    """Train once and return a snapshot at each checkpoint epoch plus the final model.

    Epoch 0 is the seeded initialization. The last element is always the model
    after ``spec.epochs`` epochs.
    """
    options = vae_options(spec)
    for epoch in checkpoints:
        if not 0 <= epoch <= spec.epochs:
            raise ConfigurationError(
                f'checkpoint {epoch} outside 0..{spec.epochs} epochs'
            )
    arch = VaeArchitecture(
        input_dim=data.dim,
        latent_dim=int(options['latent_dim']),
        hidden=tuple(int(h) for h in options['hidden']),
        likelihood=options['likelihood'],
    )
    rng = np.random.default_rng(seed)
    dither = None
    transform = _select_transform(data, options)
    if transform == 'binarize':
        dither = np.random.default_rng(int(options['binarize_seed'])).random(data.dim)
    model = VaeModel(
        arch=arch,
        params=init_parameters(arch, rng),
        transform=transform,
        alpha=float(options['alpha']),
        dither=dither,
        importance_samples=int(options['importance_samples']),
        seed=seed,
    )

    wanted = set(checkpoints)
    snapshots = [model] if 0 in wanted else []
    state = OptimizerState.create(
        arch.size, learning_rate=float(options['learning_rate'])
    )
    X = data.observations
    n = X.shape[0]
    batch_size = min(int(options['batch_size']), n)
    history: List[float] = []
    params = model.params

    for epoch in range(1, spec.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            xb = _train_batch(model, X[rows], rng)
            noise = rng.standard_normal((rows.size, arch.latent_dim))
            elbo, grad = vae_elbo_gradient(model.with_params(params), xb, noise)
            if not (math.isfinite(elbo) and np.isfinite(grad).all()):
                raise FitError(
                    f'non-finite ELBO at epoch {epoch}, batch starting {start}',
                    family='vae',
                )
            params, state = adam_step(params, -grad, state)
            total += elbo * rows.size
        history.append(total / n)
        if epoch in wanted:
            snapshots.append(
                replace(model, params=params, epoch=epoch, history=tuple(history))
            )
        logger.debug('vae seed=%d epoch %d elbo %.4f', seed, epoch, history[-1])

    final = replace(model, params=params, epoch=spec.epochs, history=tuple(history))
    return [*snapshots, final]


def vae_train(data: Dataset, spec: EstimatorSpec, seed: int) -> VaeModel:
    if spec.family != 'vae':
        raise ConfigurationError(f'vae_train needs a vae spec, got {spec.family!r}')
    return vae_fit_checkpoints(data, spec, seed)[-1]
