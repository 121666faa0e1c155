"""
Nearest-neighbour distance ratio: how much closer an observation sits to the
model's samples than to held-out validation data, and how that compares with
the memorization score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Iterator, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import pearsonr

from ._core import Dataset
from ._errors import ConfigurationError, DimensionMismatchError, InvalidDatasetError
from ._memscore import MemorizationResult, top_fraction
from ._numerics import standard_error, width_bins
from ._types import Document, ImageShape

logger = logging.getLogger(__name__)

# training rows per distance block
_BLOCK = 1024

Observations = Union[Dataset, np.ndarray]


def downsample_avg2(x: np.ndarray, shape: ImageShape) -> Tuple[np.ndarray, ImageShape]:
    """2x2 average pooling per channel of row-major (h, w, c) images."""
    h, w, c = shape
    if h % 2 or w % 2:
        raise InvalidDatasetError(f'cannot halve an image of odd size {h}x{w}')
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != h * w * c:
        raise DimensionMismatchError(h * w * c, X.shape[1])
    pooled = X.reshape(-1, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return pooled.reshape(X.shape[0], -1), (h // 2, w // 2, c)


def downsample_dataset(data: Dataset) -> Dataset:
    if not data.is_image:
        name = data.name or 'data'
        logger.warning('%s is tabular, distances use the raw features', name)
        return data
    pooled, shape = downsample_avg2(data.observations, data.shape_tag)
    return Dataset(
        observations=pooled,
        ids=data.ids,
        shape_tag=shape,
        name=data.name,
        labels=data.labels,
    )


def _rows(obs: Observations, what: str) -> np.ndarray:
    X = obs.observations if isinstance(obs, Dataset) else np.asarray(obs, dtype=float)
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise InvalidDatasetError(f'the {what} set is empty')
    return X


def _nearest(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], _BLOCK):
        block = X[start : start + _BLOCK]
        out[start : start + block.shape[0]] = cdist(block, Y).min(axis=1)
    return out


class DistanceRatios(NamedTuple):
    ids: np.ndarray
    rho: np.ndarray  # +inf where the nearest sample is an exact duplicate
    infinite: np.ndarray


def distance_ratio(
    train: Dataset, validation: Observations, samples: Observations
) -> DistanceRatios:
    """rho_i = nearest validation distance / nearest sample distance.

    Image-tagged training data is compared after one 2x2 pooling step, the
    validation and sample rows share the training image shape.
    """
    V = _rows(validation, 'validation')
    S = _rows(samples, 'sample')
    if V.shape[0] != S.shape[0]:
        raise ConfigurationError(
            'need as many samples as validation rows,'
            f' got {S.shape[0]} and {V.shape[0]}'
        )
    X = train.observations
    for other in (V, S):
        if other.shape[1] != X.shape[1]:
            raise DimensionMismatchError(X.shape[1], other.shape[1])
    if train.is_image:
        X, _ = downsample_avg2(X, train.shape_tag)
        V, _ = downsample_avg2(V, train.shape_tag)
        S, _ = downsample_avg2(S, train.shape_tag)
    else:
        logger.warning('tabular data, distances use the raw features')

    to_validation = _nearest(X, V)
    to_samples = _nearest(X, S)
    infinite = to_samples == 0.0
    rho = np.full(X.shape[0], np.inf)
    rho[~infinite] = to_validation[~infinite] / to_samples[~infinite]
    if infinite.any():
        logger.warning(
            '%d observations have an exact copy among the samples', infinite.sum()
        )
    return DistanceRatios(ids=np.array(train.ids), rho=rho, infinite=infinite)


class RatioBin(NamedTuple):
    low: float
    high: float
    center: float
    mean: float
    stderr: Optional[float]  # None for bins with a single member
    count: int


@dataclass(frozen=True, eq=False)
class RatioReport:
    ids: np.ndarray
    rho: np.ndarray
    infinite: np.ndarray
    scores: np.ndarray
    bin_index: np.ndarray  # -1 for observations left out of the bins
    bins: Tuple[RatioBin, ...]
    bin_width: float
    top_ids: np.ndarray
    top_rho: np.ndarray
    regular_rho: np.ndarray
    pearson_r: float
    pearson_p: float
    above_one: int

    @property
    def infinite_count(self) -> int:
        return int(self.infinite.sum())

    def rows(self) -> Iterator[Tuple[float, float, Optional[float], int]]:
        for b in self.bins:
            yield b.center, b.mean, b.stderr, b.count

    def to_document(self) -> Document:
        return {
            'ids': self.ids,
            'rho': self.rho,
            'infinite': self.infinite,
            'scores': self.scores,
            'bin_index': self.bin_index,
            'bin_width': self.bin_width,
            'bins': [b._asdict() for b in self.bins],
            'top_ids': self.top_ids,
            'top_rho': self.top_rho,
            'regular_rho': self.regular_rho,
            'pearson_r': self.pearson_r,
            'pearson_p': self.pearson_p,
            'above_one': self.above_one,
            'infinite_count': self.infinite_count,
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> RatioReport:
        return cls(
            ids=np.asarray(doc['ids'], dtype=np.int64),
            rho=np.asarray(doc['rho'], dtype=np.float64),
            infinite=np.asarray(doc['infinite'], dtype=bool),
            scores=np.asarray(doc['scores'], dtype=np.float64),
            bin_index=np.asarray(doc['bin_index'], dtype=np.int64),
            bins=tuple(RatioBin(**b) for b in doc['bins']),
            bin_width=float(doc['bin_width']),
            top_ids=np.asarray(doc['top_ids'], dtype=np.int64),
            top_rho=np.asarray(doc['top_rho'], dtype=np.float64),
            regular_rho=np.asarray(doc['regular_rho'], dtype=np.float64),
            pearson_r=float(doc['pearson_r']),
            pearson_p=float(doc['pearson_p']),
            above_one=int(doc['above_one']),
        )


def _correlation(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    if x.size < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, 1.0
    r, p = pearsonr(x, y)
    return float(r), float(p)


def ratio_report(
    ratios: DistanceRatios,
    scores: MemorizationResult,
    bin_width: float = 50.0,
    fraction: float = 0.05,
) -> RatioReport:
    """Bin rho by memorization score and split it by the highly-memorized set."""
    if not bin_width > 0:
        raise ConfigurationError(f'bin width must be positive, got {bin_width!r}')
    if not np.array_equal(ratios.ids, scores.ids):
        position = {int(i): p for p, i in enumerate(scores.ids)}
        try:
            order = np.array([position[int(i)] for i in ratios.ids])
        except KeyError as e:
            raise ConfigurationError(
                f'no score for observation id {e.args[0]}'
            ) from None
    else:
        order = np.arange(scores.n)
    M = scores.M[order]
    rho = ratios.rho
    usable = np.isfinite(rho) & np.isfinite(M) & ~scores.flagged[order]

    bin_index = np.full(rho.shape, -1, dtype=np.int64)
    bins = []
    if usable.any():
        first, bin_index[usable] = width_bins(M[usable], bin_width)
        for b in np.unique(bin_index[usable]):
            members = rho[usable & (bin_index == b)]
            edge = (first + b) * bin_width
            bins.append(
                RatioBin(
                    low=float(edge),
                    high=float(edge + bin_width),
                    center=float(edge + bin_width / 2),
                    mean=float(members.mean()),
                    stderr=standard_error(members),
                    count=int(members.size),
                )
            )

    top = top_fraction(scores, fraction)
    is_top = np.isin(ratios.ids, top)
    r, p = _correlation(rho[usable], M[usable])
    return RatioReport(
        ids=np.array(ratios.ids),
        rho=rho,
        infinite=np.array(ratios.infinite),
        scores=M,
        bin_index=bin_index,
        bins=tuple(bins),
        bin_width=float(bin_width),
        top_ids=np.array(top),
        top_rho=rho[is_top & np.isfinite(rho)],
        regular_rho=rho[~is_top & np.isfinite(rho)],
        pearson_r=r,
        pearson_p=p,
        above_one=int((rho > 1).sum()),
    )
