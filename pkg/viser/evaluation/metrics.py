'''
PAD metrics on attack scores (higher = more attack-like).

A bonafide presentation is misclassified when its score is at or above the threshold
(BPCER), an attack when its score is below it (APCER).
'''
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import roc_curve

from viser.datasets.manifest import Label


class ApcerAtBpcer(NamedTuple):
    apcer: float
    threshold: float
    achieved_bpcer: float


def split_scores(scores, labels=None):
    """Bonafide and attack score arrays.

    Arguments:
        scores {list of ScoreRecord, np.ndarray} -- Records with `label` and `score`, or raw scores.

    Keyword Arguments:
        labels {np.ndarray} -- Required for raw scores: 1 (or 'attack') for attacks. (default: {None})

    Returns:
        tuple -- `(bonafide, attack)` float64 arrays. Records with a non-finite score
            (scoring errors) are left out.
    """
    if labels is None:
        scores = list(scores)
        is_attack = np.array([Label.parse(r.label) is Label.attack for r in scores], dtype=bool)
        values = np.array([r.score for r in scores], dtype=np.float64)
    else:
        values = np.asarray(scores, dtype=np.float64).reshape(-1)
        labels = np.asarray(labels).reshape(-1)
        if labels.dtype.kind in 'biu':
            is_attack = labels.astype(np.int64) == 1
        else:
            is_attack = np.array([Label.parse(lab) is Label.attack for lab in labels], dtype=bool)
    keep = np.isfinite(values)
    values, is_attack = values[keep], is_attack[keep]
    bonafide, attack = values[~is_attack], values[is_attack]
    if len(bonafide) == 0 or len(attack) == 0:
        raise ValueError(f"Need at least one bonafide and one attack score, got {len(bonafide)} bonafide "
                         f"and {len(attack)} attack")
    return bonafide, attack


def auroc(scores, labels=None):
    """Area under the ROC curve in the Mann-Whitney form: the probability that a random
    attack scores above a random bonafide, ties counted 0.5.

    Arguments:
        scores {list of ScoreRecord, np.ndarray} -- Scores.

    Keyword Arguments:
        labels {np.ndarray} -- Labels when `scores` is an array. (default: {None})

    Returns:
        float -- AUROC in [0, 1].
    """
    bonafide, attack = split_scores(scores, labels)
    n_b, n_a = len(bonafide), len(attack)
    ranks = rankdata(np.concatenate([bonafide, attack]))
    u = ranks[n_b:].sum() - n_a * (n_a + 1) / 2.
    return float(u / (n_a * n_b))


def bpcer_at(bonafide, threshold):
    """Fraction of bonafide scores at or above `threshold`."""
    return float(np.mean(np.asarray(bonafide) >= threshold))


def apcer_at(attack, threshold):
    """Fraction of attack scores below `threshold`."""
    return float(np.mean(np.asarray(attack) < threshold))


def apcer_at_bpcer(scores, bpcer_target=0.01, labels=None) -> ApcerAtBpcer:
    """APCER at the most permissive threshold whose BPCER does not exceed `bpcer_target`.

    The threshold is the smallest observed score `t` with `bpcer_at(t) <= bpcer_target`. If no
    observed score qualifies, the next float above the largest score is used (no bonafide is
    rejected and every attack is missed). No interpolation between operating points.

    Arguments:
        scores {list of ScoreRecord, np.ndarray} -- Scores.

    Keyword Arguments:
        bpcer_target {float} -- Allowed bonafide error (default: {0.01})
        labels {np.ndarray} -- Labels when `scores` is an array. (default: {None})

    Returns:
        ApcerAtBpcer -- `(apcer, threshold, achieved_bpcer)`.
    """
    if not 0. <= bpcer_target <= 1.:
        raise ValueError(f"`bpcer_target` needs to be in [0, 1], got {bpcer_target}")
    bonafide, attack = split_scores(scores, labels)
    candidates = np.unique(np.concatenate([bonafide, attack]))
    bona_sorted = np.sort(bonafide)
    n_above = len(bona_sorted) - np.searchsorted(bona_sorted, candidates, side='left')
    ok = np.flatnonzero(n_above / len(bona_sorted) <= bpcer_target)
    if len(ok):
        threshold = float(candidates[ok[0]])
    else:
        threshold = float(np.nextafter(candidates[-1], np.inf))
    return ApcerAtBpcer(apcer_at(attack, threshold), threshold, bpcer_at(bonafide, threshold))


def roc_points(scores, labels=None):
    """Raw ROC operating points, for export.

    Returns:
        pd.DataFrame -- Columns `threshold`, `bpcer` (false positive rate) and `apcer`
            (1 - true positive rate), one row per distinct threshold.
    """
    bonafide, attack = split_scores(scores, labels)
    y = np.concatenate([np.zeros(len(bonafide)), np.ones(len(attack))])
    fpr, tpr, thresholds = roc_curve(y, np.concatenate([bonafide, attack]), drop_intermediate=False)
    return pd.DataFrame(dict(threshold=thresholds, bpcer=fpr, apcer=1. - tpr))
