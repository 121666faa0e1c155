from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Mapping, Union

try:
    from typing import Unpack
except ImportError:
    from typing_extensions import Unpack

from ._core import SEED_MASK, EstimatorSpec
from ._errors import ConfigurationError
from ._estimators import get_estimator
from ._types import RunConfig, RunConfigOverrides

logger = logging.getLogger(__name__)

CONFIG_DEFAULTS: Mapping[str, Any] = {
    'repetitions': 10,
    'folds': 10,
    'seed': 0,
    'workers': 1,
    'out_dir': '.',
    'force_partial': False,
    'checkpoints': [],
    'quantiles': [0.95, 0.999],
    'validation_fraction': 0.2,
    'samples_from_validation': False,
    'bin_width': 50.0,
    'top_fraction': 0.05,
    'loo_repeats': 1,
    'timestamp': False,
}

_KNOWN_KEYS = set(RunConfig.__annotations__)

EXECUTION_KEYS = frozenset({'workers', 'out_dir'})


def _int(config: Mapping[str, Any], key: str, low: int) -> int:
    value = config[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < low:
        raise ConfigurationError(f'{key} must be an integer >= {low}, got {value!r}')
    return value


def _real(config: Mapping[str, Any], key: str) -> float:
    value = config[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f'{key} must be a number, got {value!r}')
    return float(value)


def _dataset_source(source: Any, key: str) -> None:
    if not isinstance(source, Mapping) or 'kind' not in source:
        raise ConfigurationError(f'{key} must be an object with a "kind"')
    if source['kind'] not in ('csv', 'idx', 'synth'):
        raise ConfigurationError(f'unknown {key} kind {source["kind"]!r}')
    if source['kind'] != 'synth' and not source.get('path'):
        raise ConfigurationError(f'a {source["kind"]} {key} needs a path')


def validate_config(doc: Mapping[str, Any]) -> RunConfig:
    """Check every key before any compute, and fill in defaults."""
    if not isinstance(doc, Mapping):
        raise ConfigurationError('a run configuration must be a JSON object')
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise ConfigurationError(f'unknown configuration keys: {sorted(unknown)}')
    for key in ('dataset', 'estimator'):
        if key not in doc:
            raise ConfigurationError(f'configuration needs a {key!r} section')
    config: Any = {**CONFIG_DEFAULTS, **doc}

    _dataset_source(config['dataset'], 'dataset')
    if config.get('validation') is not None:
        _dataset_source(config['validation'], 'validation')
    spec = EstimatorSpec.from_document(config['estimator'])
    get_estimator(spec)

    _int(config, 'repetitions', 1)
    _int(config, 'folds', 2)
    _int(config, 'workers', 1)
    _int(config, 'loo_repeats', 1)
    if _int(config, 'seed', 0) > SEED_MASK:
        raise ConfigurationError(f'seed must be below 2**63, got {config["seed"]}')

    checkpoints = config['checkpoints']
    if not all(isinstance(c, int) and not isinstance(c, bool) for c in checkpoints):
        raise ConfigurationError(f'checkpoints must be integers, got {checkpoints!r}')
    if any(not 0 <= c <= spec.epochs for c in checkpoints):
        raise ConfigurationError(
            f'checkpoints {checkpoints} outside 0..{spec.epochs} epochs'
        )
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ConfigurationError(
            f'checkpoints must be strictly increasing: {checkpoints}'
        )
    for q in config['quantiles']:
        if isinstance(q, bool) or not isinstance(q, (int, float)) or not 0 <= q <= 1:
            raise ConfigurationError(f'quantile levels must lie in [0, 1], got {q!r}')

    if not 0 < _real(config, 'validation_fraction') < 1:
        raise ConfigurationError('validation_fraction must lie in (0, 1)')
    if not _real(config, 'bin_width') > 0:
        raise ConfigurationError('bin_width must be positive')
    if not 0 < _real(config, 'top_fraction') <= 1:
        raise ConfigurationError('top_fraction must lie in (0, 1]')
    for key in ('force_partial', 'samples_from_validation', 'timestamp'):
        if not isinstance(config[key], bool):
            raise ConfigurationError(f'{key} must be true or false')
    return config


def load_config(
    path: Union[str, Path], **overrides: Unpack[RunConfigOverrides]
) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as e:
        raise ConfigurationError(f'cannot read config {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f'{path}: line {e.lineno}, column {e.colno}: {e.msg}'
        ) from e
    if isinstance(doc, dict):
        doc.update({k: v for k, v in overrides.items() if v is not None})
    config = validate_config(doc)
    logger.debug('loaded config %s (hash %s)', path, config_hash(config)[:12])
    return config


def config_hash(config: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form, stamped into every report.

    Keys that only steer execution (worker count, output directory) are left out.
    """
    content = {k: v for k, v in config.items() if k not in EXECUTION_KEYS}
    canonical = json.dumps(content, sort_keys=True, separators=(',', ':'), default=list)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
