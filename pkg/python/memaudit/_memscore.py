"""
Memorization scores: the cross-validated K-fold estimator, the exact
leave-one-out estimator, checkpoint quantile traces and the highly-memorized
partition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._core import Dataset, EstimatorSpec, FoldPlan, subset
from ._errors import ConfigurationError, InvalidPlanError, PartialTableError
from ._estimators import get_estimator
from ._helpers import ProgressSink, run_jobs, summary_statistics
from ._numerics import (
    log_mean_exp_axis,
    log_mean_exp_stderr,
    masked_log_mean_exp,
    quantile,
)
from ._types import Document, SummaryStatistics

logger = logging.getLogger(__name__)

DEFAULT_QUANTILES: Tuple[float, ...] = (0.95, 0.999)

Coordinates = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class LogProbTable:
    entries: np.ndarray  # (L, K, n); NaN where the (l, k) fit failed
    plan: FoldPlan
    spec_hash: str
    ids: np.ndarray
    failed: Tuple[Coordinates, ...] = ()

    def __post_init__(self):
        expected = (self.plan.repetitions, self.plan.folds, self.plan.n)
        if self.entries.shape != expected:
            raise InvalidPlanError(
                f'table shape {self.entries.shape} does not match the plan {expected}'
            )

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    def to_document(self) -> Document:
        return {
            'spec_hash': self.spec_hash,
            'ids': self.ids,
            'failed': [list(c) for c in self.failed],
            'entries': self.entries,
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any], plan: FoldPlan) -> LogProbTable:
        return cls(
            entries=np.asarray(doc['entries'], dtype=np.float64),
            plan=plan,
            spec_hash=doc['spec_hash'],
            ids=np.asarray(doc['ids'], dtype=np.int64),
            failed=tuple((int(ell), int(k)) for ell, k in doc.get('failed', ())),
        )


@dataclass(frozen=True, eq=False)
class MemorizationResult:
    ids: np.ndarray
    U: np.ndarray
    V: np.ndarray
    M: np.ndarray
    # per-observation std of held-out entries; NaN when L < 2
    noise_floor: np.ndarray
    flagged: np.ndarray  # missing a multiset, excluded from summaries
    summary: SummaryStatistics
    spec_hash: str
    plan: Optional[FoldPlan] = None

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def scores_by_id(self) -> Dict[int, float]:
        return {int(i): float(m) for i, m in zip(self.ids, self.M)}

    def to_document(self) -> Document:
        return {
            'spec_hash': self.spec_hash,
            'ids': self.ids,
            'U': self.U,
            'V': self.V,
            'M': self.M,
            'noise_floor': self.noise_floor,
            'flagged': self.flagged,
            'summary': self.summary,
        }

    @classmethod
    def from_document(
        cls, doc: Mapping[str, Any], plan: Optional[FoldPlan] = None
    ) -> MemorizationResult:
        return cls(
            ids=np.asarray(doc['ids'], dtype=np.int64),
            U=np.asarray(doc['U'], dtype=np.float64),
            V=np.asarray(doc['V'], dtype=np.float64),
            M=np.asarray(doc['M'], dtype=np.float64),
            noise_floor=np.asarray(doc['noise_floor'], dtype=np.float64),
            flagged=np.asarray(doc['flagged'], dtype=bool),
            summary=doc['summary'],
            spec_hash=doc['spec_hash'],
            plan=plan,
        )


def _evaluate(estimator, model, X: np.ndarray) -> np.ndarray:
    log_probs = np.asarray(estimator.log_density(model, X))
    return log_probs.astype(np.float64, copy=False)


def compute_logprob_table(
    spec: EstimatorSpec,
    data: Dataset,
    plan: FoldPlan,
    progress: Optional[ProgressSink] = None,
    workers: int = 1,
) -> LogProbTable:
    """Fit one model per (l, k) on the data without fold I_(l,k) and score all n."""
    if plan.n != data.n:
        raise InvalidPlanError(f'plan covers {plan.n} observations, data has {data.n}')
    estimator = get_estimator(spec)
    coordinates = list(plan.coordinates())
    logger.info(
        'fitting %d %s models on %d observations', len(coordinates), spec.family, data.n
    )

    def job(coord: Coordinates) -> np.ndarray:
        ell, k = coord
        train = subset(data, plan.training(ell, k))
        model = estimator.fit(train, spec, spec.fit_seed(plan.seed, ell, k))
        return _evaluate(estimator, model, data.observations)

    outcomes = run_jobs(coordinates, job, workers=workers, progress=progress)
    return _assemble(outcomes, plan, spec, data)


def _assemble(
    outcomes: Mapping[Coordinates, Any],
    plan: FoldPlan,
    spec: EstimatorSpec,
    data: Dataset,
) -> LogProbTable:
    entries = np.full((plan.repetitions, plan.folds, plan.n), np.nan)
    failed = []
    for ell, k in plan.coordinates():
        outcome = outcomes[ell, k]
        if isinstance(outcome, Exception) or np.isnan(outcome).any():
            failed.append((ell, k))
            continue
        entries[ell, k] = outcome
    if failed:
        logger.warning(
            '%d of %d fits failed: %s', len(failed), entries[..., 0].size, failed
        )
    return LogProbTable(
        entries=entries,
        plan=plan,
        spec_hash=spec.spec_hash(),
        ids=np.array(data.ids),
        failed=tuple(failed),
    )


def aggregate_scores(table: LogProbTable, force: bool = False) -> MemorizationResult:
    """U_i, V_i and M_i = U_i - V_i from the in-training and held-out entries."""
    if table.partial and not force:
        raise PartialTableError(table.failed)
    plan = table.plan
    fits = plan.repetitions * plan.folds
    # (n, L*K) with row i holding every entry for observation i
    values = table.entries.reshape(fits, plan.n).T
    held = plan.heldout_mask().T
    valid = ~np.isnan(values)
    in_mask = ~held & valid
    out_mask = held & valid

    U = masked_log_mean_exp(values, in_mask)
    V = masked_log_mean_exp(values, out_mask)
    M = U - V

    # observations left without one of the two multisets
    flagged = (in_mask.sum(axis=1) == 0) | (out_mask.sum(axis=1) == 0)
    if flagged.any():
        logger.warning(
            '%d observations lack held-out or in-training entries', int(flagged.sum())
        )

    out_counts = out_mask.sum(axis=1)
    held_values = np.where(out_mask, values, np.nan)
    noise_floor = np.full(plan.n, np.nan)
    spread = out_counts >= 2
    if spread.any():
        noise_floor[spread] = np.nanstd(held_values[spread], axis=1, ddof=1)

    return MemorizationResult(
        ids=np.array(table.ids),
        U=U,
        V=V,
        M=M,
        noise_floor=noise_floor,
        flagged=flagged,
        summary=summary_statistics(M[~flagged]),
        spec_hash=table.spec_hash,
        plan=plan,
    )


@dataclass(frozen=True, eq=False)
class LooResult:
    ids: np.ndarray
    U: np.ndarray
    V: np.ndarray
    scores: np.ndarray
    # delta-method Monte Carlo error of each score; NaN when repeats == 1
    standard_errors: np.ndarray
    repeats: int
    spec_hash: str = ''
    warnings: Tuple[str, ...] = ()

    def to_document(self) -> Document:
        doc: Document = {
            'spec_hash': self.spec_hash,
            'repeats': self.repeats,
            'ids': self.ids,
            'U': self.U,
            'V': self.V,
            'M': self.scores,
        }
        if self.repeats > 1:
            doc['standard_errors'] = self.standard_errors
        if self.warnings:
            doc['warnings'] = list(self.warnings)
        return doc

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> LooResult:
        ids = np.asarray(doc['ids'], dtype=np.int64)
        se = doc.get('standard_errors')
        return cls(
            ids=ids,
            U=np.asarray(doc['U'], dtype=np.float64),
            V=np.asarray(doc['V'], dtype=np.float64),
            scores=np.asarray(doc['M'], dtype=np.float64),
            standard_errors=(
                np.asarray(se, dtype=np.float64)
                if se is not None
                else np.full(ids.shape, np.nan)
            ),
            repeats=int(doc['repeats']),
            spec_hash=doc.get('spec_hash', ''),
            warnings=tuple(doc.get('warnings', ())),
        )


def loo_memorization(
    spec: EstimatorSpec,
    data: Dataset,
    repeats: int = 1,
    ids: Optional[Iterable[int]] = None,
    seed: int = 0,
    workers: int = 1,
    progress: Optional[ProgressSink] = None,
) -> LooResult:
    """Exact leave-one-out scores from ``repeats`` fits with and without each x_i.

    Full-data fit t uses seed coordinates (t, 0); the fit leaving out id i
    uses (t, i + 1).
    """
    if repeats < 1:
        raise ConfigurationError(f'repeats must be >= 1, got {repeats}')
    estimator = get_estimator(spec)
    warnings: Tuple[str, ...] = ()
    if repeats == 1 and not estimator.deterministic:
        warnings = (
            f'{spec.family} fits are stochastic;'
            ' a single repeat gives no Monte Carlo error',
        )
        logger.warning('%s', warnings[0])
    if ids is None:
        positions = np.arange(data.n)
    else:
        try:
            positions = np.array([data.position_of(i) for i in ids], dtype=np.int64)
        except KeyError as e:
            raise ConfigurationError(f'unknown observation id {e.args[0]!r}') from None
    target_ids = data.ids[positions]
    everyone = np.arange(data.n)

    keys = [('full', t, -1) for t in range(repeats)]
    keys += [('loo', t, int(p)) for p in positions for t in range(repeats)]

    def job(key: Tuple[str, int, int]) -> np.ndarray:
        kind, t, p = key
        if kind == 'full':
            model = estimator.fit(data, spec, spec.fit_seed(seed, t, 0))
            return _evaluate(estimator, model, data.observations)[positions]
        ident = int(data.ids[p])
        train = subset(data, everyone[everyone != p])
        model = estimator.fit(train, spec, spec.fit_seed(seed, t, ident + 1))
        return _evaluate(estimator, model, data.observations[p : p + 1])

    outcomes = run_jobs(keys, job, workers=workers, progress=progress)
    failed = [key for key, out in outcomes.items() if isinstance(out, Exception)]
    if failed:
        raise PartialTableError([(t, p) for _, t, p in sorted(failed)])

    full = np.stack([outcomes['full', t, -1] for t in range(repeats)], axis=1)
    held = np.array(
        [[outcomes['loo', t, int(p)][0] for t in range(repeats)] for p in positions]
    )
    full = np.sort(full, axis=1)
    held = np.sort(held, axis=1)
    U = log_mean_exp_axis(full, axis=1)
    V = log_mean_exp_axis(held, axis=1)
    if repeats > 1:
        se = np.hypot(
            log_mean_exp_stderr(full, axis=1), log_mean_exp_stderr(held, axis=1)
        )
    else:
        se = np.full(positions.shape, np.nan)
    return LooResult(
        ids=np.array(target_ids),
        U=U,
        V=V,
        scores=U - V,
        standard_errors=se,
        repeats=repeats,
        spec_hash=spec.spec_hash(),
        warnings=warnings,
    )


@dataclass(frozen=True, eq=False)
class QuantileTrace:
    epochs: Tuple[int, ...]
    levels: Tuple[float, ...]
    values: np.ndarray  # (checkpoints, levels)
    mean_U: np.ndarray
    mean_V: np.ndarray

    def rows(self):
        for c, epoch in enumerate(self.epochs):
            yield (epoch, *self.values[c].tolist())

    def to_document(self) -> Document:
        return {
            'epochs': list(self.epochs),
            'levels': list(self.levels),
            'values': self.values,
            'mean_U': self.mean_U,
            'mean_V': self.mean_V,
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> QuantileTrace:
        return cls(
            epochs=tuple(int(e) for e in doc['epochs']),
            levels=tuple(float(q) for q in doc['levels']),
            values=np.asarray(doc['values'], dtype=np.float64),
            mean_U=np.asarray(doc['mean_U'], dtype=np.float64),
            mean_V=np.asarray(doc['mean_V'], dtype=np.float64),
        )


def quantile_trace(
    spec: EstimatorSpec,
    data: Dataset,
    plan: FoldPlan,
    checkpoints: Sequence[int],
    levels: Sequence[float] = DEFAULT_QUANTILES,
    workers: int = 1,
    progress: Optional[ProgressSink] = None,
    force: bool = False,
) -> QuantileTrace:
    """Score quantiles at each checkpoint epoch from one training run per fold."""
    estimator = get_estimator(spec)
    if not estimator.iterative:
        raise ConfigurationError(f'the {spec.family} family has no training epochs')
    epochs = tuple(int(c) for c in checkpoints)
    if not epochs:
        raise ConfigurationError('at least one checkpoint is required')
    if any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise ConfigurationError(f'checkpoints must be strictly increasing: {epochs}')
    if epochs[0] < 0 or epochs[-1] > spec.epochs:
        raise ConfigurationError(
            f'checkpoints {epochs} outside 0..{spec.epochs} epochs'
        )
    if plan.n != data.n:
        raise InvalidPlanError(f'plan covers {plan.n} observations, data has {data.n}')

    def job(coord: Coordinates) -> np.ndarray:
        ell, k = coord
        train = subset(data, plan.training(ell, k))
        seed = spec.fit_seed(plan.seed, ell, k)
        models = estimator.fit_checkpoints(train, spec, seed, epochs)
        return np.stack([_evaluate(estimator, m, data.observations) for m in models])

    coordinates = list(plan.coordinates())
    outcomes = run_jobs(coordinates, job, workers=workers, progress=progress)

    values = np.empty((len(epochs), len(levels)))
    mean_U = np.empty(len(epochs))
    mean_V = np.empty(len(epochs))
    for c, epoch in enumerate(epochs):
        per_fold = {
            coord: out if isinstance(out, Exception) else out[c]
            for coord, out in outcomes.items()
        }
        result = aggregate_scores(_assemble(per_fold, plan, spec, data), force=force)
        keep = ~result.flagged
        values[c] = [quantile(result.M[keep], q) for q in levels]
        mean_U[c] = float(result.U[keep].mean())
        mean_V[c] = float(result.V[keep].mean())
        logger.info('epoch %d: score quantiles %s', epoch, values[c].round(3).tolist())
    return QuantileTrace(
        epochs=epochs,
        levels=tuple(float(q) for q in levels),
        values=values,
        mean_U=mean_U,
        mean_V=mean_V,
    )


def top_fraction(result: MemorizationResult, fraction: float = 0.05) -> np.ndarray:
    """Ids of the ceil(fraction * n) highest scores, ties to the smaller id.

    Flagged observations take no part. Ids come back in rank order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f'fraction must lie in (0, 1], got {fraction!r}')
    keep = ~result.flagged
    ids = result.ids[keep]
    scores = result.M[keep]
    count = math.ceil(round(fraction * ids.size, 9))
    order = np.lexsort((ids, -scores))
    return ids[order[:count]]


def summarize_by_label(
    result: MemorizationResult, labels: Sequence[int]
) -> Dict[int, SummaryStatistics]:
    """Per-label score summaries; labels align with ``result.ids`` by position."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != result.ids.shape:
        raise ConfigurationError('one label per scored observation is required')
    keep = ~result.flagged
    return {
        int(label): summary_statistics(result.M[keep & (labels == label)])
        for label in np.unique(labels[keep])
    }
