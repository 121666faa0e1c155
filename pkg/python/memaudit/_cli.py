"""
``memaudit`` command line: one subcommand per audit, driven by a JSON run
configuration. Reports and plot rows go to ``--out``; progress goes to stderr.

Exit codes: 0 success, 2 configuration or validation error, 3 compute failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from ._codec import dumps_document
from ._config import config_hash, load_config
from ._core import Dataset, EstimatorSpec, derive_seed, make_fold_plan
from ._datasets import generate_synth, load_dataset, split_holdout, write_csv
from ._errors import ConfigurationError, FormatError, MemauditError
from ._estimators import fit_model, get_estimator
from ._memscore import (
    MemorizationResult,
    aggregate_scores,
    compute_logprob_table,
    loo_memorization,
    quantile_trace,
    summarize_by_label,
    top_fraction,
)
from ._mitigate import DEFAULT_OUTLIER, dp_bound_check, outlier_options
from ._nn_ratio import distance_ratio, ratio_report
from ._report import (
    ReportFile,
    hist_bins,
    hist_rows,
    read_report,
    score_histogram,
    write_report,
    write_rows,
)
from ._types import Provenance, RunConfig

logger = logging.getLogger('memaudit')

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3

# n * T above this needs --acknowledge-cost
LOO_FIT_BUDGET = 10_000

STRATEGIES = ('outlier', 'dp')


class Run:
    """Shared state of one configured command."""

    def __init__(self, command: str, config: RunConfig):
        self.command = command
        self.config = config
        self.spec = EstimatorSpec.from_document(config['estimator'])
        self.seed = int(config['seed'])
        self.workers = int(config['workers'])
        self.out = Path(config['out_dir'])
        self._data: Optional[Dataset] = None
        self.synth = None

    @property
    def data(self) -> Dataset:
        if self._data is None:
            self._data, self.synth = load_dataset(self.config['dataset'], self.seed)
        return self._data

    def progress(self, done: int, total: int) -> None:
        logger.info('%s: %d/%d fits done', self.command, done, total)

    def provenance(self, spec: Optional[EstimatorSpec] = None) -> Provenance:
        prov: Provenance = {
            'config_hash': config_hash(self.config),
            'spec_hash': (spec or self.spec).spec_hash(),
            'seed': self.seed,
            'command': self.command,
        }
        if self.config.get('timestamp'):
            prov['created'] = datetime.now(timezone.utc).isoformat()
        return prov

    def report(self, spec: Optional[EstimatorSpec] = None) -> ReportFile:
        report = ReportFile(provenance=self.provenance(spec))
        if self.synth is not None:
            report.add('synth', self.synth.annotations())
        return report

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def kfold(self, spec: EstimatorSpec, data: Dataset) -> MemorizationResult:
        plan = make_fold_plan(
            data.n, self.config['folds'], self.config['repetitions'], self.seed
        )
        table = compute_logprob_table(
            spec, data, plan, progress=self.progress, workers=self.workers
        )
        return aggregate_scores(table, force=self.config['force_partial'])


def _memorization_sections(report: ReportFile, run: Run, result: MemorizationResult):
    fraction = run.config['top_fraction']
    report.add('plan', result.plan)
    report.add('memorization', result)
    top = top_fraction(result, fraction)
    report.add('top_fraction', {'fraction': fraction, 'ids': top})
    labels = run.data.labels
    if labels is not None and np.array_equal(result.ids, run.data.ids):
        by_label = summarize_by_label(result, labels)
        report.add('by_label', {str(k): v for k, v in by_label.items()})


def _score_rows(run: Run, stem: str, result: MemorizationResult) -> None:
    write_rows(
        run.path(f'{stem}_scores.csv'),
        ('id', 'U', 'V', 'M', 'noise_floor', 'flagged'),
        zip(
            result.ids.tolist(),
            result.U,
            result.V,
            result.M,
            result.noise_floor,
            result.flagged.astype(int).tolist(),
        ),
    )
    write_rows(
        run.path(f'{stem}_histogram.csv'),
        ('low', 'high', 'count', 'p95'),
        score_histogram(result.M[~result.flagged], result.summary['percentiles']['95']),
    )


def cmd_memscore(run: Run, args: argparse.Namespace) -> int:
    result = run.kfold(run.spec, run.data)
    report = run.report()
    _memorization_sections(report, run, result)
    write_report(report, run.path('memscore.json'))
    _score_rows(run, 'memscore', result)

    memorized = np.isin(result.ids, top_fraction(result, run.config['top_fraction']))
    keep = ~result.flagged & np.isfinite(result.U)
    if keep.any():
        bins = hist_bins(result.U[keep], memorized[keep], run.config['bin_width'])
        write_rows(
            run.path('memscore_logprob_bins.csv'),
            ('low', 'high', 'memorized', 'regular', 'proportion'),
            hist_rows(bins),
        )
    summary = result.summary
    logger.info(
        'memorization scores: median %.4g, p95 %.4g, max %.4g',
        summary['median'],
        summary['percentiles']['95'],
        float(np.nanmax(result.M)),
    )
    return EXIT_OK


def _repeats(run: Run, args: argparse.Namespace) -> int:
    repeats = args.repeats if args.repeats is not None else run.config['loo_repeats']
    if repeats < 1:
        raise ConfigurationError(f'--repeats must be >= 1, got {repeats}')
    fits = run.data.n * repeats
    if fits > LOO_FIT_BUDGET and not args.acknowledge_cost:
        raise ConfigurationError(
            f'leave-one-out needs {fits + repeats} fits (n={run.data.n}, T={repeats});'
            ' pass --acknowledge-cost to run it'
        )
    return repeats


def cmd_loo(run: Run, args: argparse.Namespace) -> int:
    repeats = _repeats(run, args)
    loo = loo_memorization(
        run.spec,
        run.data,
        repeats,
        seed=run.seed,
        workers=run.workers,
        progress=run.progress,
    )
    report = run.report()
    report.add('loo', loo)
    write_report(report, run.path('loo.json'))
    write_rows(
        run.path('loo_scores.csv'),
        ('id', 'U', 'V', 'M', 'standard_error'),
        (
            (i, u, v, m, se if repeats > 1 else None)
            for i, u, v, m, se in zip(
                loo.ids.tolist(), loo.U, loo.V, loo.scores, loo.standard_errors
            )
        ),
    )
    return EXIT_OK


def cmd_nn_ratio(run: Run, args: argparse.Namespace) -> int:
    estimator = get_estimator(run.spec)
    hook = run.config['samples_from_validation']
    if not estimator.can_sample and not hook:
        raise ConfigurationError(f'the {run.spec.family} family cannot draw samples')
    if run.config.get('validation') is not None:
        train = run.data
        validation, _ = load_dataset(run.config['validation'], run.seed)
    else:
        train, validation = split_holdout(
            run.data, run.config['validation_fraction'], run.seed
        )

    result = run.kfold(run.spec, train)
    if hook:
        samples = validation.observations
    else:
        model = fit_model(train, run.spec, run.spec.fit_seed(run.seed, -1, 0))
        rng = np.random.default_rng(derive_seed(run.seed, -1, 1))
        samples = estimator.sample(model, rng, validation.n)
    ratios = distance_ratio(train, validation, samples)
    ratio = ratio_report(
        ratios, result, run.config['bin_width'], run.config['top_fraction']
    )

    report = run.report()
    report.add('memorization', result)
    report.add('nn_ratio', ratio)
    write_report(report, run.path('nn_ratio.json'))
    write_rows(
        run.path('nn_ratio_bins.csv'),
        ('center', 'mean', 'stderr', 'count'),
        ratio.rows(),
    )
    logger.info(
        'distance ratio: pearson r %.3f, %d above 1, %d infinite',
        ratio.pearson_r,
        ratio.above_one,
        ratio.infinite_count,
    )
    return EXIT_OK


def cmd_trace(run: Run, args: argparse.Namespace) -> int:
    plan = make_fold_plan(
        run.data.n, run.config['folds'], run.config['repetitions'], run.seed
    )
    trace = quantile_trace(
        run.spec,
        run.data,
        plan,
        run.config['checkpoints'],
        levels=run.config['quantiles'],
        workers=run.workers,
        progress=run.progress,
        force=run.config['force_partial'],
    )
    report = run.report()
    report.add('trace', trace)
    write_report(report, run.path('trace.json'))
    header = ['epoch', *(f'q{q:g}' for q in trace.levels), 'mean_U', 'mean_V']
    write_rows(
        run.path('trace.csv'),
        header,
        (
            (*row, u, v)
            for row, u, v in zip(trace.rows(), trace.mean_U, trace.mean_V)
        ),
    )
    return EXIT_OK


def _mitigate_outlier(run: Run) -> int:
    base = replace(run.spec, outlier=None)
    options = outlier_options(run.spec.outlier or DEFAULT_OUTLIER)
    wrapped = replace(run.spec, outlier=options)
    before = run.kfold(base, run.data)
    after = run.kfold(wrapped, run.data)
    comparison: Dict[str, Any] = {
        'weight': options['weight'],
        'variance_scale': options['variance_scale'],
        'max_before': float(np.nanmax(before.M[~before.flagged])),
        'max_after': float(np.nanmax(after.M[~after.flagged])),
        'p95_before': before.summary['percentiles']['95'],
        'p95_after': after.summary['percentiles']['95'],
    }
    report = run.report(wrapped)
    report.add('before', before)
    report.add('after', after)
    report.add('comparison', comparison)
    write_report(report, run.path('mitigate_outlier.json'))
    write_rows(
        run.path('mitigate_outlier_scores.csv'),
        ('id', 'M_before', 'M_after'),
        zip(before.ids.tolist(), before.M, after.M),
    )
    logger.info(
        'outlier component: max score %.4g -> %.4g',
        comparison['max_before'],
        comparison['max_after'],
    )
    return EXIT_OK


def _mitigate_dp(run: Run, args: argparse.Namespace) -> int:
    if run.spec.family != 'dp-histogram':
        raise ConfigurationError(
            f'the dp strategy needs the dp-histogram family, got {run.spec.family!r}'
        )
    repeats = _repeats(run, args)
    if repeats < 2:
        raise ConfigurationError(
            f'the dp bound check needs at least 2 repeats, got {repeats}'
        )
    epsilon = float(get_estimator(run.spec).options(run.spec)['epsilon'])
    loo = loo_memorization(
        run.spec,
        run.data,
        repeats,
        seed=run.seed,
        workers=run.workers,
        progress=run.progress,
    )
    verdict = dp_bound_check(loo, epsilon)
    histogram = fit_model(run.data, run.spec, run.spec.fit_seed(run.seed, -1, 0))
    report = run.report()
    report.add('loo', loo)
    report.add('dp_histogram', histogram)
    report.add('dp_verdict', verdict)
    write_report(report, run.path('mitigate_dp.json'))
    logger.info(
        'dp bound: max score %.4g +- %.2g vs epsilon %g: %s',
        verdict['max_score'],
        verdict['standard_error'],
        epsilon,
        'pass' if verdict['passed'] else 'fail',
    )
    return EXIT_OK


def cmd_mitigate(run: Run, args: argparse.Namespace) -> int:
    if args.strategy not in STRATEGIES:
        raise ConfigurationError(
            f'unknown strategy {args.strategy!r}, expected one of {STRATEGIES}'
        )
    if args.strategy == 'outlier':
        return _mitigate_outlier(run)
    return _mitigate_dp(run, args)


def cmd_synth(args: argparse.Namespace) -> int:
    spec: Dict[str, Any] = {'kind': args.kind, 'n': args.n, 'seed': args.seed or 0}
    for key in ('outliers', 'duplicates', 'multiplicity', 'displacement', 'dim'):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    result = generate_synth(spec)  # type: ignore[arg-type]
    out = Path(args.out or '.')
    out.mkdir(parents=True, exist_ok=True)
    stem = args.name or result.dataset.name
    write_csv(result.dataset, out / f'{stem}.csv')
    annotations = {**result.annotations(), 'spec': spec}
    if result.dataset.shape_tag is not None:
        annotations['shape'] = list(result.dataset.shape_tag)
    (out / f'{stem}.json').write_text(dumps_document(annotations), encoding='utf-8')
    logger.info('wrote %d rows to %s', result.dataset.n, out / f'{stem}.csv')
    return EXIT_OK


def _describe(name: str, section: Any) -> List[str]:
    if not isinstance(section, dict):
        return [f'  {name}: {section!r}']
    lines = [f'  {name}:']
    summary = section.get('summary')
    if isinstance(summary, dict):
        lines.append(
            f'    n={summary["count"]} mean={summary["mean"]:.6g}'
            f' median={summary["median"]:.6g} skewness={summary["skewness"]:.4g}'
        )
        percentiles = ', '.join(
            f'p{p}={v:.6g}' for p, v in summary['percentiles'].items()
        )
        lines.append(f'    {percentiles}')
    for key, value in section.items():
        if key == 'summary':
            continue
        if isinstance(value, (list, dict)):
            lines.append(f'    {key}: [{len(value)} entries]')
        else:
            lines.append(f'    {key}: {value}')
    return lines


def cmd_report(args: argparse.Namespace) -> int:
    report = read_report(args.path)
    lines = [f'{args.path}: memaudit report version {report.version}']
    for key, value in report.provenance.items():
        lines.append(f'  {key}: {value}')
    for name, section in report.sections.items():
        lines.extend(_describe(name, section))
    sys.stdout.write('\n'.join(lines) + '\n')
    return EXIT_OK


CONFIGURED: Dict[str, Callable[[Run, argparse.Namespace], int]] = {
    'memscore': cmd_memscore,
    'loo': cmd_loo,
    'nn-ratio': cmd_nn_ratio,
    'trace': cmd_trace,
    'mitigate': cmd_mitigate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='memaudit', description='Memorization audits for density estimators.'
    )
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('-v', '--verbose', action='count', default=0)
    commands = parser.add_subparsers(dest='command', required=True)

    def configured(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.add_argument('--config', required=True, help='run configuration (JSON)')
        sub.add_argument('--seed', type=int)
        sub.add_argument('--workers', type=int)
        sub.add_argument('--out', help='output directory')
        sub.add_argument('--force-partial', action='store_true', default=None)
        sub.add_argument('-v', '--verbose', action='count', default=argparse.SUPPRESS)
        return sub

    configured('memscore', 'cross-validated memorization scores')
    for name, help in (
        ('loo', 'exact leave-one-out memorization scores'),
        ('mitigate', 'outlier-component or differential-privacy mitigation'),
    ):
        sub = configured(name, help)
        sub.add_argument('--repeats', type=int, help='T fits per distribution')
        sub.add_argument('--acknowledge-cost', action='store_true')
        if name == 'mitigate':
            sub.add_argument('--strategy', default='outlier', help='outlier or dp')
    configured('nn-ratio', 'nearest-neighbour distance ratio')
    configured('trace', 'score quantiles across training checkpoints')

    synth = commands.add_parser('synth', help='write a planted synthetic dataset')
    synth.add_argument(
        '--kind',
        default='gaussian-clusters',
        choices=('gaussian-clusters', 'two-moons', 'image-blobs'),
    )
    synth.add_argument('-n', type=int, default=500)
    synth.add_argument('--seed', type=int)
    synth.add_argument('--dim', type=int)
    synth.add_argument('--outliers', type=int)
    synth.add_argument('--duplicates', type=int)
    synth.add_argument('--multiplicity', type=int)
    synth.add_argument('--displacement', type=float)
    synth.add_argument('--name')
    synth.add_argument('--out', help='output directory')
    synth.add_argument('-v', '--verbose', action='count', default=argparse.SUPPRESS)

    report = commands.add_parser('report', help='pretty-print a report file')
    report.add_argument('path')
    report.add_argument('-v', '--verbose', action='count', default=argparse.SUPPRESS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=max(logging.WARNING - 10 * args.verbose, logging.DEBUG),
        format='%(levelname)s %(name)s: %(message)s',
    )
    try:
        if args.command == 'synth':
            return cmd_synth(args)
        if args.command == 'report':
            return cmd_report(args)
        config = load_config(
            args.config,
            seed=args.seed,
            workers=args.workers,
            out_dir=args.out,
            force_partial=args.force_partial,
        )
        return CONFIGURED[args.command](Run(args.command, config), args)
    except (ConfigurationError, FormatError) as e:
        logger.error('%s', e)
        return EXIT_CONFIG
    except MemauditError as e:
        logger.error('%s failed: %s', args.command, e)
        return EXIT_COMPUTE
