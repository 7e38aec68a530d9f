import pytest
import numpy as np
from sklearn.cluster import HDBSCAN

from viser.clustering.hdbscan import NOISE, denoise_fixations, hdbscan_labels
from viser.datasets.from_simulations import fixation_cloud
from viser.saliency.gaze import FixationRecord


@pytest.mark.parametrize('allow_single_cluster', [True, False])
def test_matches_sklearn_on_fixation_clouds(allow_single_cluster):
    for seed in range(100):
        points, _ = fixation_cloud(seed)
        ours = hdbscan_labels(points, min_cluster_size=5, min_samples=3, allow_single_cluster=allow_single_cluster)
        ref = HDBSCAN(min_cluster_size=5, min_samples=3, allow_single_cluster=allow_single_cluster).fit(points)
        agreement = ((ours.labels == NOISE) == (ref.labels_ == -1)).mean()
        assert agreement >= 0.95, seed


def two_blobs(seed):
    rng = np.random.default_rng(seed)
    blobs = [rng.normal(center, 0.01, (25, 2)) for center in ((0.45, 0.45), (0.55, 0.55))]
    noise = np.array([(0., 0.), (1., 1.), (0., 1.), (1., 0.), (0.5, 0.)])
    truth = np.concatenate([np.zeros(25), np.ones(25), np.full(len(noise), -1)])
    return np.concatenate(blobs + [noise]), truth


@pytest.mark.parametrize('seed', range(5))
def test_recovers_blobs(seed):
    points, truth = two_blobs(seed)
    labeling = hdbscan_labels(points, allow_single_cluster=False)
    assert labeling.n_clusters >= 2
    assert labeling.kept[truth >= 0].mean() >= 0.9
    assert not labeling.kept[truth < 0].any()
    first = set(labeling.labels[(truth == 0) & labeling.kept])
    second = set(labeling.labels[(truth == 1) & labeling.kept])
    assert not first & second


def test_single_blob_needs_allow_single_cluster():
    points = np.random.default_rng(0).normal(0.5, 0.01, (6, 2))
    single = hdbscan_labels(points, allow_single_cluster=True)
    assert single.n_clusters == 1
    assert single.kept.any()
    ref = HDBSCAN(min_cluster_size=5, min_samples=3, allow_single_cluster=True).fit(points)
    np.testing.assert_array_equal(single.kept, ref.labels_ >= 0)
    none = hdbscan_labels(points, allow_single_cluster=False)
    assert none.n_clusters == 0
    assert not none.kept.any()


@pytest.mark.parametrize('seed', range(5))
def test_single_cluster_drops_outliers(seed):
    blob = np.random.default_rng(seed).normal(0.5, 0.01, (15, 2))
    outliers = np.array([(0., 0.), (1., 1.), (0., 1.)])
    points = np.concatenate([blob, outliers])
    labeling = hdbscan_labels(points, min_cluster_size=5, min_samples=3, allow_single_cluster=True)
    ref = HDBSCAN(min_cluster_size=5, min_samples=3, allow_single_cluster=True).fit(points)
    assert labeling.n_clusters == 1
    assert (labeling.labels[-3:] == NOISE).all()
    assert 0 < labeling.kept.sum() < len(blob)
    np.testing.assert_array_equal(labeling.labels, ref.labels_)


@pytest.mark.parametrize('n', [0, 1, 4])
def test_fewer_points_than_min_cluster_size_is_noise(n):
    points = np.random.default_rng(0).uniform(size=(n, 2))
    labeling = hdbscan_labels(points, min_cluster_size=5)
    assert len(labeling) == n
    assert labeling.n_clusters == 0
    assert (labeling.labels == NOISE).all()


def test_labels_are_consistent():
    points, _ = fixation_cloud(3)
    labeling = hdbscan_labels(points)
    assert set(labeling.labels[labeling.kept]) == set(range(labeling.n_clusters))
    assert labeling.lambdas.shape == (len(points),)


@pytest.mark.parametrize('kwargs', [dict(min_cluster_size=1), dict(min_samples=0)])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        hdbscan_labels(np.zeros((10, 2)), **kwargs)


def test_denoise_fixations_keeps_order():
    points, truth = fixation_cloud(1, n_blobs=1, blob_size=(15, 16), noise=4, scale=0.01)
    fixations = [FixationRecord(float(x), float(y), 100. + i, 'p0', t_ms=float(i)) for i, (x, y) in enumerate(points)]
    kept, labeling = denoise_fixations(fixations)
    assert len(labeling) == len(fixations)
    assert [f.t_ms for f in kept] == sorted(f.t_ms for f in kept)
    assert len(kept) == int(labeling.kept.sum())
    assert 2 <= len(kept) < len(fixations)
