"""
The density-estimator contract and the family registry.

Every family answers three questions: ``fit`` (training Dataset, spec, seed),
``log_density`` (vectorized over rows) and ``sample``. Iterative families also
provide ``fit_checkpoints`` so one training run yields several snapshots.
"""

from __future__ import annotations

import abc
import logging
from typing import Any, ClassVar, Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from ._codec import Codec, decode_array, encode_array
from ._core import (
    Dataset,
    EstimatorSpec,
    option_choice,
    option_int,
    option_real,
)
from ._errors import ConfigurationError, FitError, FormatError
from ._gaussian import (
    GaussianParams,
    fit_gaussian_mle,
    gaussian_log_density,
    sample_gaussian,
)
from ._gmm import GmmParams, fit_gmm_em, gmm_log_density, sample_gmm
from ._kde import KdeParams, fit_kde, kde_log_density, sample_kde
from ._mitigate import (
    DpHistogram,
    OutlierMixture,
    broad_component,
    dp_histogram_log_density,
    fit_dp_histogram,
    histogram_edges,
    mixture_log_density,
    outlier_options,
    sample_dp_histogram,
)
from ._types import (
    ConstantOptions,
    Document,
    DpHistogramOptions,
    FitProvenance,
    GaussianOptions,
    GmmOptions,
    KdeOptions,
)
from ._vae import (
    VaeArchitecture,
    VaeModel,
    vae_fit_checkpoints,
    vae_log_density,
    vae_options,
    vae_sample,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'memaudit-model'
MODEL_VERSION = 1


class DensityEstimator(abc.ABC):
    family: ClassVar[str]
    defaults: ClassVar[Mapping[str, Any]] = {}
    iterative: ClassVar[bool] = False
    can_sample: ClassVar[bool] = True
    deterministic: ClassVar[bool] = True

    def options(self, spec: EstimatorSpec) -> Dict[str, Any]:
        unknown = set(spec.hyperparameters) - set(self.defaults)
        if unknown:
            raise ConfigurationError(
                f'unknown {self.family} hyperparameters: {sorted(unknown)}'
            )
        options = {**self.defaults, **spec.hyperparameters}
        self.check(options)
        return options

    def check(self, options: Dict[str, Any]) -> None:
        """Type and range checks on merged options; raises ConfigurationError."""

    @abc.abstractmethod
    def fit(self, data: Dataset, spec: EstimatorSpec, seed: int) -> Any: ...

    @abc.abstractmethod
    def log_density(self, model: Any, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def dump_state(self, model: Any) -> Document: ...

    @abc.abstractmethod
    def load_state(self, state: Mapping[str, Any]) -> Any: ...

    def sample(self, model: Any, rng: np.random.Generator, count: int) -> np.ndarray:
        raise ConfigurationError(f'the {self.family} family cannot draw samples')

    def fit_checkpoints(
        self, data: Dataset, spec: EstimatorSpec, seed: int, checkpoints: Sequence[int]
    ) -> List[Any]:
        raise ConfigurationError(f'the {self.family} family is not iterative')


def _dump_gaussian(params: GaussianParams) -> Document:
    return {
        'mean': encode_array(params.mean),
        'covariance': encode_array(params.covariance),
        'degenerate': params.degenerate,
    }


def _load_gaussian(state: Mapping[str, Any]) -> GaussianParams:
    return GaussianParams(
        mean=decode_array(state['mean']),
        covariance=decode_array(state['covariance']),
        degenerate=bool(state.get('degenerate', False)),
    )


class GaussianEstimator(DensityEstimator):
    family = 'gaussian-mle'
    defaults: GaussianOptions = {'mode': 'diagonal'}

    def check(self, options):
        option_choice(self.family, 'mode', options['mode'], ('diagonal', 'full'))

    def fit(self, data, spec, seed):
        return fit_gaussian_mle(data, self.options(spec)['mode'])

    def log_density(self, model, x):
        return gaussian_log_density(model, x)

    def sample(self, model, rng, count):
        return sample_gaussian(model, rng, count)

    def dump_state(self, model):
        return _dump_gaussian(model)

    def load_state(self, state):
        return _load_gaussian(state)


class KdeEstimator(DensityEstimator):
    family = 'kde'
    defaults: KdeOptions = {'bandwidth': 'silverman'}

    def check(self, options):
        if options['bandwidth'] != 'silverman':
            option_real(self.family, 'bandwidth', options['bandwidth'], positive=True)

    def fit(self, data, spec, seed):
        return fit_kde(data, self.options(spec)['bandwidth'])

    def log_density(self, model, x):
        return kde_log_density(model, x)

    def sample(self, model, rng, count):
        return sample_kde(model, rng, count)

    def dump_state(self, model):
        return {'points': encode_array(model.points), 'bandwidth': model.bandwidth}

    def load_state(self, state):
        return KdeParams(
            points=decode_array(state['points']), bandwidth=float(state['bandwidth'])
        )


class GmmEstimator(DensityEstimator):
    family = 'gmm'
    defaults: GmmOptions = {'components': 2, 'max_iters': 200, 'tol': 1e-6}
    deterministic = False

    def check(self, options):
        option_int(self.family, 'components', options['components'], 1)
        option_int(self.family, 'max_iters', options['max_iters'], 1)
        option_real(self.family, 'tol', options['tol'], positive=True)

    def fit(self, data, spec, seed):
        options = self.options(spec)
        return fit_gmm_em(
            data,
            components=int(options['components']),
            seed=seed,
            max_iters=int(options['max_iters']),
            tol=float(options['tol']),
        )

    def log_density(self, model, x):
        return gmm_log_density(model, x)

    def sample(self, model, rng, count):
        return sample_gmm(model, rng, count)

    def dump_state(self, model):
        return {
            'weights': encode_array(model.weights),
            'means': encode_array(model.means),
            'variances': encode_array(model.variances),
            'log_likelihoods': list(model.log_likelihoods),
            'reinitialized': model.reinitialized,
            'converged': model.converged,
        }

    def load_state(self, state):
        return GmmParams(
            weights=decode_array(state['weights']),
            means=decode_array(state['means']),
            variances=decode_array(state['variances']),
            log_likelihoods=tuple(state.get('log_likelihoods', ())),
            reinitialized=int(state.get('reinitialized', 0)),
            converged=bool(state.get('converged', False)),
        )


class VaeEstimator(DensityEstimator):
    family = 'vae'
    iterative = True
    deterministic = False

    def options(self, spec):
        return vae_options(spec)

    def fit(self, data, spec, seed):
        return vae_fit_checkpoints(data, spec, seed)[-1]

    def fit_checkpoints(self, data, spec, seed, checkpoints):
        # the last element is the final model, the rest follow `checkpoints`
        return vae_fit_checkpoints(data, spec, seed, checkpoints)[:-1]

    def log_density(self, model, x):
        return vae_log_density(model, x)

    def sample(self, model, rng, count):
        return vae_sample(model, rng, count)

    def dump_state(self, model):
        arch = model.arch
        return {
            'architecture': {
                'input_dim': arch.input_dim,
                'latent_dim': arch.latent_dim,
                'hidden': list(arch.hidden),
                'likelihood': arch.likelihood,
            },
            'params': encode_array(model.params),
            'transform': model.transform,
            'alpha': model.alpha,
            'dither': encode_array(model.dither) if model.dither is not None else None,
            'importance_samples': model.importance_samples,
            'seed': model.seed,
            'epoch': model.epoch,
            'history': list(model.history),
        }

    def load_state(self, state):
        arch = state['architecture']
        return VaeModel(
            arch=VaeArchitecture(
                input_dim=int(arch['input_dim']),
                latent_dim=int(arch['latent_dim']),
                hidden=tuple(int(h) for h in arch['hidden']),
                likelihood=arch['likelihood'],
            ),
            params=decode_array(state['params']),
            transform=state['transform'],
            alpha=float(state['alpha']),
            dither=decode_array(state.get('dither')),
            importance_samples=int(state['importance_samples']),
            seed=int(state['seed']),
            epoch=int(state['epoch']),
            history=tuple(state.get('history', ())),
        )


class DpHistogramEstimator(DensityEstimator):
    family = 'dp-histogram'
    defaults: DpHistogramOptions = {
        'epsilon': 1.0,
        'bins': 20,
        'low': 0.0,
        'high': 1.0,
    }
    deterministic = False

    def check(self, options):
        option_real(self.family, 'epsilon', options['epsilon'], positive=True)
        option_int(self.family, 'bins', options['bins'], 1)
        for key in ('low', 'high'):
            for value in np.ravel(np.asarray(options[key], dtype=object)):
                option_real(self.family, key, value)

    def fit(self, data, spec, seed):
        options = self.options(spec)
        edges = histogram_edges(
            int(options['bins']), options['low'], options['high'], data.dim
        )
        return fit_dp_histogram(data, edges, float(options['epsilon']), seed)

    def log_density(self, model, x):
        return dp_histogram_log_density(model, x)

    def sample(self, model, rng, count):
        return sample_dp_histogram(model, rng, count)

    def dump_state(self, model):
        return {
            'edges': [encode_array(e) for e in model.edges],
            'masses': encode_array(model.masses),
            'counts': encode_array(model.counts),
            'epsilon': model.epsilon,
            'seed': model.seed,
        }

    def load_state(self, state):
        return DpHistogram(
            edges=tuple(decode_array(e) for e in state['edges']),
            masses=decode_array(state['masses']),
            epsilon=float(state['epsilon']),
            seed=int(state['seed']),
            counts=decode_array(state['counts']),
        )


class ConstantEstimator(DensityEstimator):
    """log p(x) = c everywhere; a plumbing check, not a normalized density."""

    family = 'constant'
    defaults: ConstantOptions = {'log_density': 0.0}
    can_sample = False

    def check(self, options):
        option_real(self.family, 'log_density', options['log_density'])

    def fit(self, data, spec, seed):
        return float(self.options(spec)['log_density'])

    def log_density(self, model, x):
        return np.full(np.atleast_2d(x).shape[0], model)

    def dump_state(self, model):
        return {'log_density': model}

    def load_state(self, state):
        return float(state['log_density'])


class OutlierWrappedEstimator(DensityEstimator):
    """Base family mixed with a broad, low-weight Gaussian component."""

    def __init__(self, base: DensityEstimator, options: Mapping[str, Any]):
        self.base = base
        self.outlier = outlier_options(options)
        self.family = base.family
        self.iterative = base.iterative
        self.can_sample = base.can_sample
        self.deterministic = base.deterministic

    def options(self, spec):
        return self.base.options(spec)

    def _wrap(self, model: Any, data: Dataset) -> OutlierMixture:
        return OutlierMixture(
            base=model,
            broad=broad_component(data, float(self.outlier['variance_scale'])),
            weight=float(self.outlier['weight']),
        )

    def fit(self, data, spec, seed):
        return self._wrap(self.base.fit(data, spec, seed), data)

    def fit_checkpoints(self, data, spec, seed, checkpoints):
        models = self.base.fit_checkpoints(data, spec, seed, checkpoints)
        return [self._wrap(model, data) for model in models]

    def log_density(self, model, x):
        return mixture_log_density(
            model, lambda rows: self.base.log_density(model.base, rows), x
        )

    def sample(self, model, rng, count):
        base = np.array(self.base.sample(model.base, rng, count), dtype=np.float64)
        broad = rng.random(count) < model.weight
        if broad.any():
            base[broad] = sample_gaussian(model.broad, rng, int(broad.sum()))
        return base

    def dump_state(self, model):
        return {
            'base': self.base.dump_state(model.base),
            'broad': _dump_gaussian(model.broad),
            'weight': model.weight,
        }

    def load_state(self, state):
        return OutlierMixture(
            base=self.base.load_state(state['base']),
            broad=_load_gaussian(state['broad']),
            weight=float(state['weight']),
        )


_REGISTRY: Dict[str, DensityEstimator] = {
    cls.family: cls()
    for cls in (
        GaussianEstimator,
        KdeEstimator,
        GmmEstimator,
        VaeEstimator,
        DpHistogramEstimator,
        ConstantEstimator,
    )
}


def get_estimator(spec: EstimatorSpec) -> DensityEstimator:
    try:
        estimator = _REGISTRY[spec.family]
    except KeyError:
        raise ConfigurationError(f'unknown estimator family {spec.family!r}') from None
    estimator.options(spec)
    if spec.outlier is not None:
        return OutlierWrappedEstimator(estimator, spec.outlier)
    return estimator


def fit_model(data: Dataset, spec: EstimatorSpec, seed: int) -> Any:
    estimator = get_estimator(spec)
    logger.debug('fitting %s on %d rows, seed %d', spec.family, data.n, seed)
    try:
        return estimator.fit(data, spec, seed)
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        raise FitError(str(e), family=spec.family) from e


class ModelContainer(NamedTuple):
    spec: EstimatorSpec
    model: Any
    provenance: FitProvenance


def dump_model(
    spec: EstimatorSpec,
    model: Any,
    provenance: Optional[FitProvenance] = None,
    codec: Optional[Codec] = None,
) -> bytes:
    """Versioned BSON container: family tag, spec, weights and fit provenance."""
    prov: Dict[str, Any] = dict(provenance or {})
    prov.setdefault('spec_hash', spec.spec_hash())
    if prov.get('coordinates') is not None:
        prov['coordinates'] = list(prov['coordinates'])
    doc = {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'family': spec.family,
        'spec': spec.to_document(),
        'state': get_estimator(spec).dump_state(model),
        'provenance': prov,
    }
    return (codec or Codec()).encode(doc)


def load_model(data: bytes, codec: Optional[Codec] = None) -> ModelContainer:
    doc = (codec or Codec()).decode(data)
    if doc.get('format') != MODEL_FORMAT:
        raise FormatError(f'not a model container: format {doc.get("format")!r}')
    if doc.get('version') != MODEL_VERSION:
        raise FormatError(
            f'unsupported model container version {doc.get("version")!r},'
            f' expected {MODEL_VERSION}'
        )
    spec = EstimatorSpec.from_document(doc['spec'])
    if spec.family != doc.get('family'):
        raise FormatError(
            f'family tag {doc.get("family")!r} disagrees with spec {spec.family!r}'
        )
    prov: Dict[str, Any] = dict(doc.get('provenance') or {})
    if prov.get('coordinates') is not None:
        prov['coordinates'] = tuple(prov['coordinates'])
    model = get_estimator(spec).load_state(doc['state'])
    return ModelContainer(spec=spec, model=model, provenance=prov)  # type: ignore
