"""End-to-end audits on planted data; run with ``pytest -m slow``."""

import numpy as np
import pytest

from memaudit import (
    EstimatorSpec,
    aggregate_scores,
    compute_logprob_table,
    distance_ratio,
    dp_bound_check,
    fit_model,
    generate_synth,
    get_estimator,
    loo_memorization,
    make_fold_plan,
    quantile_trace,
    ratio_report,
    split_holdout,
    top_fraction,
)

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module', params=[0, 1, 2])
def planted(request):
    return generate_synth(
        {
            'n': 500,
            'seed': request.param,
            'outliers': 5,
            'displacement': 20,
            'duplicates': 5,
            'multiplicity': 5,
        }
    )


@pytest.fixture(scope='module')
def kde_scores(planted):
    spec = EstimatorSpec.build('kde')
    data = planted.dataset
    plan = make_fold_plan(data.n, 10, 3, seed=0)
    return aggregate_scores(compute_logprob_table(spec, data, plan, workers=4))


def test_outliers_rank_highest(planted, kde_scores):
    top = set(top_fraction(kde_scores, 0.05).tolist())
    assert set(planted.outlier_ids) <= top


def test_duplicates_stay_out_of_the_top(planted, kde_scores):
    top = set(top_fraction(kde_scores, 0.05).tolist())
    scores = kde_scores.scores_by_id()
    lowest_outlier = min(scores[i] for i in planted.outlier_ids)
    for group in planted.duplicate_groups:
        assert not top & set(group)
        assert max(scores[i] for i in group) < lowest_outlier
        assert max(scores[i] for i in group) < kde_scores.summary['median']


@pytest.fixture(scope='module')
def vae_scores(planted):
    spec = EstimatorSpec.build(
        'vae',
        epochs=60,
        seed_policy='shared',
        hidden=(32,),
        batch_size=64,
        learning_rate=3e-3,
        importance_samples=64,
    )
    data = planted.dataset
    plan = make_fold_plan(data.n, 10, 2, seed=0)
    return aggregate_scores(compute_logprob_table(spec, data, plan, workers=4))


def test_vae_ranks_outliers_above_duplicates(planted, vae_scores):
    top = set(top_fraction(vae_scores, 0.05).tolist())
    assert set(planted.outlier_ids) <= top
    scores = vae_scores.scores_by_id()
    median = vae_scores.summary['median']
    for group in planted.duplicate_groups:
        assert max(scores[i] for i in group) < median


def _recomputed_bins(report, width):
    usable = np.isfinite(report.rho) & np.isfinite(report.scores)
    numbers = np.floor(report.scores[usable] / width)
    rho = report.rho[usable]
    return [
        ((u + 0.5) * width, rho[numbers == u].mean(), int((numbers == u).sum()))
        for u in np.unique(numbers)
    ]


def test_ratio_bins_recompute_from_raw_values(planted):
    train, validation = split_holdout(planted.dataset, 0.2, seed=0)
    spec = EstimatorSpec.build('kde')
    plan = make_fold_plan(train.n, 10, 3, seed=0)
    scores = aggregate_scores(compute_logprob_table(spec, train, plan, workers=4))
    model = fit_model(train, spec, seed=0)
    rng = np.random.default_rng(1)
    samples = get_estimator(spec).sample(model, rng, validation.n)
    report = ratio_report(distance_ratio(train, validation, samples), scores, 5.0)

    expected = _recomputed_bins(report, 5.0)
    assert len(expected) == len(report.bins)
    for (center, mean, count), row in zip(expected, report.rows()):
        assert row[0] == pytest.approx(center, abs=1e-9)
        assert row[1] == pytest.approx(mean, abs=1e-12)
        assert row[3] == count
    assert -1.0 <= report.pearson_r <= 1.0


def test_outlier_component_halves_the_largest_score(planted, kde_scores):
    spec = EstimatorSpec.build('kde', outlier={'weight': 0.01})
    data = planted.dataset
    plan = make_fold_plan(data.n, 10, 3, seed=0)
    after = aggregate_scores(compute_logprob_table(spec, data, plan, workers=4))
    outliers = list(planted.outlier_ids)
    assert after.M[outliers].max() < kde_scores.M[outliers].max() / 2
    assert np.median(after.M) == pytest.approx(np.median(kde_scores.M), abs=0.05)


def test_dp_histogram_stays_within_epsilon():
    data = generate_synth({'n': 500, 'seed': 3, 'scale': 0.1, 'dim': 1}).dataset
    low, high = data.observations.min() - 1, data.observations.max() + 1
    spec = EstimatorSpec.build('dp-histogram', epsilon=1.0, bins=20, low=low, high=high)
    loo = loo_memorization(spec, data, repeats=200, workers=4)
    verdict = dp_bound_check(loo, 1.0)
    assert verdict['passed']
    assert np.isfinite(loo.scores).all()


def test_vae_scores_grow_with_training():
    data = generate_synth({'n': 60, 'seed': 5, 'scale': 0.5}).dataset
    spec = EstimatorSpec.build(
        'vae',
        epochs=200,
        seed_policy='shared',
        hidden=(16,),
        batch_size=16,
        learning_rate=3e-3,
        importance_samples=64,
    )
    plan = make_fold_plan(data.n, 5, 1, seed=0)
    trace = quantile_trace(spec, data, plan, [0, 200], levels=[0.95], workers=4)
    assert trace.values[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert trace.values[1, 0] > 0.0
    assert trace.mean_U[1] > trace.mean_V[1]
    assert trace.mean_U[1] > trace.mean_U[0]


BLOB_CHECKPOINTS = [0, 1, 50, 150, 200]


def _blob_spec(learning_rate, epochs=200):
    return EstimatorSpec.build(
        'vae',
        epochs=epochs,
        seed_policy='shared',
        hidden=(32,),
        batch_size=32,
        learning_rate=learning_rate,
        importance_samples=32,
        alpha=0.05,
    )


def _blobs(seed):
    return generate_synth({'kind': 'image-blobs', 'n': 300, 'seed': seed}).dataset


@pytest.fixture(scope='module')
def blob_traces():
    traces = {}
    for seed in (0, 1, 2):
        data = _blobs(seed)
        plan = make_fold_plan(data.n, 5, 1, seed=seed)
        traces[seed] = {
            rate: quantile_trace(
                _blob_spec(rate),
                data,
                plan,
                BLOB_CHECKPOINTS,
                levels=[0.95, 0.999],
                workers=4,
            )
            for rate in (1e-3, 1e-4)
        }
    return traces


def test_lower_learning_rate_memorizes_less(blob_traces):
    for by_rate in blob_traces.values():
        assert by_rate[1e-4].values[-1, 0] < by_rate[1e-3].values[-1, 0]


def test_score_quantiles_rise_then_level_off(blob_traces):
    settled = 0
    for by_rate in blob_traces.values():
        q = by_rate[1e-3].values
        np.testing.assert_allclose(q[0], 0.0, atol=1e-9)
        grew = (q[-1] > q[1]).all()
        early = q[2] - q[0]
        late = q[-1] - q[3]
        settled += bool(grew and (late < early).all())
    assert settled >= 2


def test_blob_distance_ratios_do_not_track_scores():
    for seed in (0, 1, 2):
        train, validation = split_holdout(_blobs(seed), 0.2, seed=seed)
        spec = _blob_spec(1e-3, epochs=100)
        plan = make_fold_plan(train.n, 5, 1, seed=seed)
        scores = aggregate_scores(compute_logprob_table(spec, train, plan, workers=4))
        model = fit_model(train, spec, seed=seed)
        rng = np.random.default_rng(seed)
        samples = get_estimator(spec).sample(model, rng, validation.n)
        report = ratio_report(distance_ratio(train, validation, samples), scores, 0.25)

        assert abs(report.pearson_r) < 0.3
        expected = _recomputed_bins(report, 0.25)
        assert [row[3] for row in report.rows()] == [count for *_, count in expected]
        for (_, mean, _), row in zip(expected, report.rows()):
            assert row[1] == pytest.approx(mean, abs=1e-12)
