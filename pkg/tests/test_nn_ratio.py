import math

import numpy as np
import pytest

from memaudit import (
    ConfigurationError,
    Dataset,
    DimensionMismatchError,
    InvalidDatasetError,
    RatioReport,
    distance_ratio,
    downsample_avg2,
    ratio_report,
)
from memaudit._nn_ratio import DistanceRatios, downsample_dataset


def test_downsample_example():
    x = np.array([[1.0, 3.0, 5.0, 7.0]])
    pooled, shape = downsample_avg2(x, (2, 2, 1))
    assert pooled.tolist() == [[4.0]]
    assert shape == (1, 1, 1)


def test_downsample_keeps_channels_apart():
    image = np.zeros((4, 4, 2))
    image[..., 0] = 1.0
    image[:2, :2, 1] = 8.0
    pooled, shape = downsample_avg2(image.reshape(1, -1), (4, 4, 2))
    assert shape == (2, 2, 2)
    grid = pooled.reshape(2, 2, 2)
    assert (grid[..., 0] == 1.0).all()
    assert grid[0, 0, 1] == 8.0
    assert grid[1, 1, 1] == 0.0


def test_downsample_errors():
    with pytest.raises(InvalidDatasetError):
        downsample_avg2(np.zeros((1, 9)), (3, 3, 1))
    with pytest.raises(DimensionMismatchError):
        downsample_avg2(np.zeros((1, 5)), (2, 2, 1))


def test_downsample_dataset_leaves_tabular_data(points2d):
    assert downsample_dataset(points2d) is points2d
    images = Dataset.from_array(np.ones((3, 16)), shape_tag=(4, 4, 1))
    pooled = downsample_dataset(images)
    assert pooled.shape_tag == (2, 2, 1)
    assert pooled.dim == 4


def test_ratio_example():
    train = Dataset.from_array([[0.0], [10.0]])
    ratios = distance_ratio(train, [[2.0], [50.0]], [[1.0], [60.0]])
    assert ratios.rho[0] == 2.0
    assert ratios.ids.tolist() == [0, 1]


def test_samples_equal_to_validation_give_unit_ratios(points2d, rng):
    validation = rng.normal(size=(20, 2))
    ratios = distance_ratio(points2d, validation, validation.copy())
    np.testing.assert_array_equal(ratios.rho, 1.0)
    assert not ratios.infinite.any()


def test_exact_copy_gives_infinite_ratio(points2d, rng):
    samples = rng.normal(size=(5, 2))
    samples[3] = points2d.observations[7]
    ratios = distance_ratio(points2d, rng.normal(size=(5, 2)), samples)
    assert math.isinf(ratios.rho[7])
    assert ratios.infinite.tolist().count(True) == 1


def test_ratio_is_scale_invariant(points2d, rng):
    validation = rng.normal(size=(10, 2))
    samples = rng.normal(size=(10, 2))
    scaled = Dataset.from_array(3.0 * points2d.observations)
    a = distance_ratio(points2d, validation, samples)
    b = distance_ratio(scaled, 3.0 * validation, 3.0 * samples)
    np.testing.assert_allclose(a.rho, b.rho, rtol=1e-12)


def test_ratio_pools_images():
    rng = np.random.default_rng(1)
    train = Dataset.from_array(rng.random((6, 16)), shape_tag=(4, 4, 1))
    validation = rng.random((4, 16))
    samples = rng.random((4, 16))
    ratios = distance_ratio(train, validation, samples)
    X, V, S = (
        downsample_avg2(x, (4, 4, 1))[0]
        for x in (train.observations, validation, samples)
    )
    i = 2
    expected = (
        np.linalg.norm(V - X[i], axis=1).min() / np.linalg.norm(S - X[i], axis=1).min()
    )
    assert ratios.rho[i] == pytest.approx(expected, rel=1e-12)


def test_ratio_errors(points2d, rng):
    with pytest.raises(ConfigurationError):
        distance_ratio(points2d, rng.normal(size=(5, 2)), rng.normal(size=(4, 2)))
    with pytest.raises(DimensionMismatchError):
        distance_ratio(points2d, rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    with pytest.raises(InvalidDatasetError):
        distance_ratio(points2d, np.empty((0, 2)), np.empty((0, 2)))


def _ratios(rho):
    rho = np.asarray(rho, dtype=np.float64)
    return DistanceRatios(ids=np.arange(rho.size), rho=rho, infinite=np.isinf(rho))


def test_report_bins(make_result):
    result = make_result([-10.0, -5.0, 20.0, 49.0, 40.0, 130.0])
    report = ratio_report(
        _ratios([1.0, 2.0, 3.0, 5.0, 4.0, 9.0]), result, bin_width=50, fraction=0.2
    )
    assert report.bin_index.tolist() == [0, 0, 1, 1, 1, 3]
    assert [b.count for b in report.bins] == [2, 3, 1]
    assert [b.center for b in report.bins] == [-25.0, 25.0, 125.0]
    assert report.bins[0].mean == 1.5
    assert report.bins[1].mean == 4.0
    assert report.bins[2].stderr is None
    assert report.bins[1].stderr == pytest.approx(1.0 / math.sqrt(3))
    assert report.top_ids.tolist() == [5, 3]
    assert sorted(report.top_rho.tolist()) == [5.0, 9.0]
    assert report.above_one == 5
    assert list(report.rows())[0] == (-25.0, 1.5, report.bins[0].stderr, 2)


def test_report_excludes_infinite_ratios(make_result):
    result = make_result([1.0, 2.0, 3.0, 4.0])
    report = ratio_report(_ratios([1.0, np.inf, 2.0, 3.0]), result, bin_width=1)
    assert report.infinite_count == 1
    assert report.bin_index[1] == -1
    assert sum(b.count for b in report.bins) == 3
    assert report.pearson_r == pytest.approx(0.9819805060619657)


def test_report_bins_start_at_the_lowest_score(make_result):
    result = make_result([93.5, 94.0, 96.0, 97.0])
    report = ratio_report(_ratios([1.0, 2.0, 3.0, np.inf]), result, bin_width=1.1)
    assert report.bin_index[:3].min() == 0
    assert report.bin_index[3] == -1
    assert sum(b.count for b in report.bins) == 3
    assert all(np.isfinite(b.mean) for b in report.bins)
    assert report.bins[0].low <= 93.5 + 1e-9


def test_report_constant_ratio_has_no_correlation(make_result):
    result = make_result(np.linspace(0, 100, 20))
    report = ratio_report(_ratios(np.ones(20)), result)
    assert report.pearson_r == 0.0
    assert report.pearson_p == 1.0


def test_report_aligns_ids(make_result):
    result = make_result([3.0, 1.0], ids=[4, 9])
    ratios = DistanceRatios(
        ids=np.array([9, 4]), rho=np.array([2.0, 5.0]), infinite=np.zeros(2, bool)
    )
    report = ratio_report(ratios, result, fraction=0.5)
    assert report.scores.tolist() == [1.0, 3.0]
    assert report.top_ids.tolist() == [4]
    assert report.top_rho.tolist() == [5.0]

    with pytest.raises(ConfigurationError):
        ratio_report(
            DistanceRatios(np.array([1, 2]), np.ones(2), np.zeros(2, bool)), result
        )
    with pytest.raises(ConfigurationError):
        ratio_report(ratios, result, bin_width=0)


def test_report_document_round_trip(make_result):
    result = make_result([1.0, 2.0, 3.0, 4.0])
    report = ratio_report(_ratios([1.0, np.inf, 2.0, 3.0]), result, bin_width=1)
    back = RatioReport.from_document(report.to_document())
    np.testing.assert_array_equal(back.rho, report.rho)
    assert back.bins == report.bins
    assert back.pearson_r == report.pearson_r
