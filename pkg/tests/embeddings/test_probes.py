import pytest
import numpy as np
from sklearn.datasets import make_blobs

from viser.datasets.manifest import Label
from viser.embeddings.probes import ProbeKind, fit_probe, probe_scores


def xor_data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, 2))
    x = x[np.abs(x).min(1) > 0.1]
    y = (np.sign(x[:, 0]) != np.sign(x[:, 1])).astype(int)
    return x, y


@pytest.mark.parametrize('kind', list(ProbeKind))
def test_separable_blobs(kind):
    x, y = make_blobs(n_samples=120, centers=[(-3, -3, 0), (3, 3, 0)], cluster_std=0.5, random_state=0)
    probe = fit_probe(x, y, kind)
    assert probe.converged
    assert (probe.predict(x) == y).all()
    scores = probe.scores(x)
    assert ((scores > 0) & (scores < 1)).all()
    assert scores[y == 1].min() > scores[y == 0].max()


def test_xor_needs_rbf():
    x, y = xor_data()
    rbf = fit_probe(x, y, 'svm_rbf', C=10.)
    linear = fit_probe(x, y, 'svm_linear')
    assert (rbf.predict(x) == y).mean() == 1.
    assert (linear.predict(x) == y).mean() <= 0.75


def test_svm_scores_are_monotone_in_decision():
    x, y = make_blobs(n_samples=60, centers=2, random_state=1)
    probe = fit_probe(x, y, 'svm_linear')
    order = np.argsort(probe.scores(x, squash=False), kind='mergesort')
    assert (np.diff(probe.scores(x)[order]) >= 0).all()
    np.testing.assert_allclose(probe.scores(x, squash=False), probe.decision(x))


def test_probe_scores_records():
    x, y = make_blobs(n_samples=20, centers=2, random_state=2)
    probe = fit_probe(x, y, 'logreg')
    labels = [Label.attack if v else Label.bonafide for v in y]
    records = probe_scores(probe, x, [f"s{i}" for i in range(20)], labels)
    assert [r.sample_id for r in records] == [f"s{i}" for i in range(20)]
    np.testing.assert_allclose([r.score for r in records], probe.scores(x))
    with pytest.raises(ValueError):
        probe_scores(probe, x, ['a'], labels)


def test_fit_probe_errors():
    x = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.raises(ValueError):
        fit_probe(x, np.zeros(10), 'logreg')
    with pytest.raises(ValueError):
        fit_probe(x, np.arange(10) % 2, 'knn')
    with pytest.raises(ValueError):
        fit_probe(x[:, 0], np.arange(10) % 2, 'logreg')
    probe = fit_probe(x, np.arange(10) % 2, 'logreg')
    with pytest.raises(ValueError):
        probe.scores(x[:, :2])
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        fit_probe(bad, np.arange(10) % 2, 'logreg')


def test_non_convergence_warns():
    x, y = xor_data(seed=1)
    with pytest.warns(UserWarning, match='converge'):
        probe = fit_probe(x, y, 'svm_rbf', max_iter=1)
    assert not probe.converged
