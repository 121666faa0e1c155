from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._errors import ConfigurationError, InvalidDatasetError, InvalidPlanError
from ._types import (
    Document,
    EstimatorDocument,
    Family,
    ImageShape,
    OutlierOptions,
    SeedPolicy,
)

FAMILIES: Tuple[str, ...] = (
    'gaussian-mle',
    'kde',
    'gmm',
    'vae',
    'dp-histogram',
    'constant',
)

SEED_POLICIES: Tuple[str, ...] = ('per-fit', 'shared')

SEED_MASK = (1 << 63) - 1


def option_int(owner: str, key: str, value: Any, low: int = 0) -> int:
    """An integer option of at least ``low``; booleans are not integers here."""
    if (
        isinstance(value, bool)
        or not isinstance(value, (int, np.integer))
        or value < low
    ):
        raise ConfigurationError(
            f'{owner} {key} must be an integer >= {low}, got {value!r}'
        )
    return int(value)


def option_real(owner: str, key: str, value: Any, positive: bool = False) -> float:
    """A finite real option, optionally strictly positive."""
    if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
        raise ConfigurationError(f'{owner} {key} must be a number, got {value!r}')
    real = float(value)
    if not np.isfinite(real) or (positive and not real > 0):
        qualifier = 'a positive' if positive else 'a finite'
        raise ConfigurationError(
            f'{owner} {key} must be {qualifier} number, got {value!r}'
        )
    return real


def option_choice(owner: str, key: str, value: Any, choices: Sequence[str]) -> str:
    if value not in choices:
        raise ConfigurationError(
            f'{owner} {key} must be one of {list(choices)}, got {value!r}'
        )
    return value


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def derive_seed(master: int, ell: int, k: int) -> int:
    """Stable 63-bit seed for fit (ell, k), independent of execution order.

    Seeds stay below 2**63 so they fit a signed 64-bit BSON field.
    """
    payload = struct.pack('>qqq', int(master), int(ell), int(k))
    digest = hashlib.blake2b(payload, digest_size=8, person=b'memaudit-fit').digest()
    return int.from_bytes(digest, 'big') & SEED_MASK


@dataclass(frozen=True, eq=False)
class Dataset:
    observations: np.ndarray
    ids: np.ndarray
    shape_tag: Optional[ImageShape] = None
    name: str = ''
    labels: Optional[np.ndarray] = None
    column_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] < 1:
            raise InvalidDatasetError(
                f'observations must be an n x D matrix with D >= 1, got {obs.shape}'
            )
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (obs.shape[0],):
            raise InvalidDatasetError('one id per row is required')
        if np.unique(ids).size != ids.size:
            raise InvalidDatasetError('ids must be unique')
        if self.shape_tag is not None:
            h, w, c = self.shape_tag
            if h * w * c != obs.shape[1]:
                raise InvalidDatasetError(
                    f'image shape {self.shape_tag} does not match dimension'
                    f' {obs.shape[1]}'
                )
        object.__setattr__(self, 'observations', _frozen(obs))
        object.__setattr__(self, 'ids', _frozen(ids))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != ids.shape:
                raise InvalidDatasetError('one label per row is required')
            object.__setattr__(self, 'labels', _frozen(labels))

    @classmethod
    def from_array(
        cls,
        observations: Any,
        shape_tag: Optional[ImageShape] = None,
        name: str = '',
        labels: Optional[Any] = None,
        column_names: Optional[Sequence[str]] = None,
    ) -> Dataset:
        """Load-time constructor: positional ids 0..n-1 and n >= 2."""
        obs = np.asarray(observations, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.shape[0] < 2:
            raise InvalidDatasetError(
                f'a dataset needs n >= 2 rows, got {obs.shape[0]}'
            )
        if not np.isfinite(obs).all():
            raise InvalidDatasetError('observations must be finite')
        return cls(
            observations=obs,
            ids=np.arange(obs.shape[0]),
            shape_tag=shape_tag,
            name=name,
            labels=labels,
            column_names=tuple(column_names) if column_names is not None else None,
        )

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    @property
    def is_image(self) -> bool:
        return self.shape_tag is not None

    def position_of(self, ident: int) -> int:
        hits = np.flatnonzero(self.ids == ident)
        if hits.size == 0:
            raise KeyError(ident)
        return int(hits[0])

    def __len__(self) -> int:
        return self.n


def subset(dataset: Dataset, keep: Any) -> Dataset:
    """Rows at positions ``keep``, in ascending position order, ids preserved."""
    positions = np.unique(np.asarray(keep, dtype=np.int64).ravel())
    if positions.size == 0:
        raise InvalidDatasetError('cannot take an empty subset')
    if positions[0] < 0 or positions[-1] >= dataset.n:
        raise InvalidDatasetError(
            f'subset index out of range for a dataset of {dataset.n} rows'
        )
    return Dataset(
        observations=dataset.observations[positions],
        ids=dataset.ids[positions],
        shape_tag=dataset.shape_tag,
        name=dataset.name,
        labels=dataset.labels[positions] if dataset.labels is not None else None,
        column_names=dataset.column_names,
    )


@dataclass(frozen=True)
class FoldPlan:
    n: int
    folds: int
    repetitions: int
    seed: int
    fold_index: np.ndarray  # (L, n): holdout fold of each position per repetition

    def __post_init__(self):
        object.__setattr__(self, 'fold_index', _frozen(self.fold_index))

    def holdout(self, ell: int, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_index[ell] == k)

    def training(self, ell: int, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_index[ell] != k)

    def coordinates(self) -> Iterator[Tuple[int, int]]:
        for ell in range(self.repetitions):
            for k in range(self.folds):
                yield ell, k

    def heldout_mask(self) -> np.ndarray:
        """Boolean (L*K, n) mask, True where position i is held out of fit (l, k)."""
        ks = np.arange(self.folds)
        mask = self.fold_index[:, None, :] == ks[None, :, None]
        return mask.reshape(self.repetitions * self.folds, self.n)

    def to_document(self) -> Document:
        return {
            'n': self.n,
            'folds': self.folds,
            'repetitions': self.repetitions,
            'seed': self.seed,
            'fold_index': self.fold_index.tolist(),
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> FoldPlan:
        return cls(
            n=int(doc['n']),
            folds=int(doc['folds']),
            repetitions=int(doc['repetitions']),
            seed=int(doc['seed']),
            fold_index=np.asarray(doc['fold_index'], dtype=np.int64),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FoldPlan):
            return NotImplemented
        return (
            (self.n, self.folds, self.repetitions, self.seed)
            == (other.n, other.folds, other.repetitions, other.seed)
            and np.array_equal(self.fold_index, other.fold_index)
        )


def make_fold_plan(n: int, folds: int, repetitions: int, seed: int) -> FoldPlan:
    if n < 2:
        raise InvalidDatasetError(f'a fold plan needs n >= 2, got {n}')
    if folds < 2 or folds > n:
        raise InvalidPlanError(f'folds must satisfy 2 <= K <= n, got K={folds}, n={n}')
    if repetitions < 1:
        raise InvalidPlanError(f'repetitions must be >= 1, got {repetitions}')

    # the first n mod K folds take one extra element
    base, extra = divmod(n, folds)
    sizes = np.full(folds, base)
    sizes[:extra] += 1
    labels = np.repeat(np.arange(folds), sizes)

    fold_index = np.empty((repetitions, n), dtype=np.int64)
    for ell in range(repetitions):
        rng = np.random.default_rng(derive_seed(seed, ell, -1))
        perm = rng.permutation(n)
        fold_index[ell, perm] = labels
    return FoldPlan(
        n=n, folds=folds, repetitions=repetitions, seed=seed, fold_index=fold_index
    )


@dataclass(frozen=True)
class EstimatorSpec:
    family: Family
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    epochs: int = 0
    seed_policy: SeedPolicy = 'per-fit'
    outlier: Optional[OutlierOptions] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f'unknown estimator family {self.family!r}')
        if self.seed_policy not in SEED_POLICIES:
            raise ConfigurationError(f'unknown seed policy {self.seed_policy!r}')
        epochs = option_int('estimator', 'epochs', self.epochs)
        object.__setattr__(self, 'epochs', epochs)
        if not isinstance(self.hyperparameters, Mapping):
            raise ConfigurationError(
                f'hyperparameters must be an object, got {self.hyperparameters!r}'
            )
        object.__setattr__(self, 'hyperparameters', dict(self.hyperparameters))
        if self.outlier is not None:
            if not isinstance(self.outlier, Mapping):
                raise ConfigurationError(
                    f'outlier must be an object, got {self.outlier!r}'
                )
            object.__setattr__(self, 'outlier', dict(self.outlier))

    @classmethod
    def build(
        cls,
        family: Family,
        epochs: int = 0,
        seed_policy: SeedPolicy = 'per-fit',
        outlier: Optional[OutlierOptions] = None,
        **hyperparameters: Any,
    ) -> EstimatorSpec:
        return cls(
            family=family,
            hyperparameters=hyperparameters,
            epochs=epochs,
            seed_policy=seed_policy,
            outlier=outlier,
        )

    def fit_seed(self, master: int, ell: int, k: int) -> int:
        if self.seed_policy == 'shared':
            return int(master) & SEED_MASK
        return derive_seed(master, ell, k)

    def to_document(self) -> EstimatorDocument:
        return {
            'family': self.family,
            'hyperparameters': dict(self.hyperparameters),
            'epochs': self.epochs,
            'seed_policy': self.seed_policy,
            'outlier': dict(self.outlier) if self.outlier is not None else None,
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> EstimatorSpec:
        if not isinstance(doc, Mapping):
            raise ConfigurationError(f'estimator must be an object, got {doc!r}')
        if 'family' not in doc:
            raise ConfigurationError('estimator document needs a family')
        return cls(
            family=doc['family'],
            hyperparameters=doc.get('hyperparameters') or {},
            epochs=doc.get('epochs', 0),
            seed_policy=doc.get('seed_policy', 'per-fit'),
            outlier=doc.get('outlier'),
        )

    def spec_hash(self) -> str:
        canonical = json.dumps(self.to_document(), sort_keys=True, default=list)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def __hash__(self) -> int:
        return hash(self.spec_hash())
