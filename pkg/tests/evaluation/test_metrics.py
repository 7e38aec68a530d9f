import pytest
import numpy as np

from viser.evaluation import metrics
from viser.evaluation.scoring import ScoreRecord


def brute_auroc(bonafide, attack):
    total = 0.
    for a in attack:
        for b in bonafide:
            total += 1. if a > b else (0.5 if a == b else 0.)
    return total / (len(attack) * len(bonafide))


def sweep_apcer(bonafide, attack, target):
    scores = np.concatenate([bonafide, attack])
    for t in sorted(set(scores.tolist())) + [np.nextafter(scores.max(), np.inf)]:
        if np.mean(bonafide >= t) <= target:
            return np.mean(attack < t), t


def random_scores(rng):
    n_b, n_a = rng.integers(2, 51, 2)
    bonafide = rng.uniform(0, 1, n_b)
    attack = rng.uniform(0.2, 1.2, n_a)
    # inject ties inside and across classes
    attack[:n_a // 3] = rng.choice(bonafide, n_a // 3)
    bonafide = np.round(bonafide, 2)
    attack = np.round(attack, 2)
    return bonafide, attack


@pytest.mark.parametrize('seed', range(200))
def test_auroc_and_apcer_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    bonafide, attack = random_scores(rng)
    scores = np.concatenate([bonafide, attack])
    labels = np.concatenate([np.zeros(len(bonafide)), np.ones(len(attack))]).astype(int)
    assert abs(metrics.auroc(scores, labels) - brute_auroc(bonafide, attack)) < 1e-12
    for target in [0., 0.01, 0.1, 0.5]:
        res = metrics.apcer_at_bpcer(scores, target, labels)
        apcer, threshold = sweep_apcer(bonafide, attack, target)
        assert res.apcer == apcer
        assert res.threshold == threshold
        assert res.achieved_bpcer <= target


def test_auroc_perfect_and_inverted():
    labels = np.array([0, 0, 1, 1])
    assert metrics.auroc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 1.
    assert metrics.auroc(np.array([0.8, 0.9, 0.1, 0.2]), labels) == 0.
    assert metrics.auroc(np.ones(4), labels) == 0.5


def test_apcer_at_bpcer_fallback_threshold():
    bonafide = np.array([0.9, 0.9, 0.9])
    attack = np.array([0.1, 0.9])
    scores = np.concatenate([bonafide, attack])
    labels = np.array([0, 0, 0, 1, 1])
    res = metrics.apcer_at_bpcer(scores, 0.01, labels)
    assert res.threshold > 0.9
    assert res.apcer == 1.
    assert res.achieved_bpcer == 0.


def test_apcer_at_bpcer_separable():
    scores = np.array([0.1, 0.2, 0.3, 0.7, 0.8])
    labels = np.array([0, 0, 0, 1, 1])
    res = metrics.apcer_at_bpcer(scores, 0.01, labels)
    assert res.apcer == 0.
    assert res.threshold == 0.7


def test_records_and_string_labels_agree():
    rng = np.random.default_rng(0)
    values = rng.uniform(size=20)
    labels = np.array(['bonafide'] * 10 + ['attack'] * 10)
    records = [ScoreRecord(f"s{i}", lab, v) for i, (lab, v) in enumerate(zip(labels, values))]
    assert metrics.auroc(records) == metrics.auroc(values, labels)
    assert metrics.apcer_at_bpcer(records) == metrics.apcer_at_bpcer(values, labels=labels)


def test_error_records_are_excluded():
    records = [ScoreRecord('a', 'bonafide', 0.1), ScoreRecord('b', 'attack', 0.9),
               ScoreRecord('c', 'attack', float('nan'), 'unreadable image')]
    assert metrics.auroc(records) == 1.


@pytest.mark.parametrize('labels', [np.zeros(4, dtype=int), np.ones(4, dtype=int)])
def test_single_class_raises(labels):
    with pytest.raises(ValueError):
        metrics.auroc(np.arange(4.), labels)


def test_bpcer_target_range():
    with pytest.raises(ValueError):
        metrics.apcer_at_bpcer(np.arange(4.), 1.5, np.array([0, 0, 1, 1]))


def test_auroc_invariant_under_monotone_map():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=60)
    labels = (rng.uniform(size=60) < 0.5).astype(int)
    squashed = 0.5 + np.arctan(scores) / np.pi
    assert abs(metrics.auroc(scores, labels) - metrics.auroc(squashed, labels)) < 1e-12


def test_roc_points():
    scores = np.array([0.1, 0.4, 0.35, 0.8])
    labels = np.array([0, 0, 1, 1])
    df = metrics.roc_points(scores, labels)
    assert list(df.columns) == ['threshold', 'bpcer', 'apcer']
    assert df['bpcer'].is_monotonic_increasing
    assert df['apcer'].is_monotonic_decreasing
    assert df['bpcer'].iloc[-1] == 1.
    assert df['apcer'].iloc[-1] == 0.
