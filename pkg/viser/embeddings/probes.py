"""Classical probes on frozen embeddings: logistic regression, linear SVM and RBF SVM.

Every probe standardizes features on its training set first. Scores are oriented so that
higher means attack: logistic regression emits the attack probability, the SVMs emit
`0.5 + arctan(decision) / pi`, a monotone map of the decision value into (0, 1).
"""
import enum
import logging
import warnings
from dataclasses import dataclass
from typing import List

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import Pipeline, make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from viser.evaluation.scoring import ScoreRecord

logger = logging.getLogger(__name__)


class ProbeKind(str, enum.Enum):
    logreg = 'logreg'
    svm_linear = 'svm_linear'
    svm_rbf = 'svm_rbf'


@dataclass
class ProbeModel:
    kind: ProbeKind
    pipeline: Pipeline
    dim: int
    converged: bool = True

    def decision(self, vectors):
        """Raw attack-oriented output: probability for logreg, decision value for SVMs."""
        vectors = _check_vectors(vectors, self.dim)
        if self.kind is ProbeKind.logreg:
            return self.pipeline.predict_proba(vectors)[:, 1]
        return self.pipeline.decision_function(vectors)

    def scores(self, vectors, squash=True):
        """Attack scores in (0, 1); with `squash=False` SVM decision values are returned as is."""
        out = self.decision(vectors)
        if self.kind is not ProbeKind.logreg and squash:
            out = 0.5 + np.arctan(out) / np.pi
        return np.asarray(out, dtype=np.float64)

    def predict(self, vectors):
        return self.pipeline.predict(_check_vectors(vectors, self.dim))


def _check_vectors(vectors, dim=None):
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError(f"`vectors` needs shape (n, d), got {vectors.shape}")
    if dim is not None and vectors.shape[1] != dim:
        raise ValueError(f"Probe expects vectors of length {dim}, got {vectors.shape[1]}")
    if not np.isfinite(vectors).all():
        raise ValueError("`vectors` contains non-finite values")
    return vectors


def fit_probe(vectors, labels, kind, C=1., gamma='scale', max_iter=1000, seed=0) -> ProbeModel:
    """Fit a probe on embeddings.

    Arguments:
        vectors {np.ndarray} -- Embeddings of shape (n, d).
        labels {np.ndarray} -- Class indices, 1 for attack.
        kind {ProbeKind, str} -- 'logreg', 'svm_linear' or 'svm_rbf'.

    Keyword Arguments:
        C {float} -- Inverse regularization strength. (default: {1.})
        gamma {str, float} -- RBF width; 'scale' is `1 / (d * var)` on standardized features.
            (default: {'scale'})
        max_iter {int} -- Iteration cap; hitting it clears `converged`. (default: {1000})
        seed {int} -- Seed for solver randomness. (default: {0})

    Returns:
        ProbeModel -- Fitted probe.
    """
    kind = ProbeKind(kind)
    vectors = _check_vectors(vectors)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if len(labels) != len(vectors):
        raise ValueError(f"Got {len(labels)} labels for {len(vectors)} vectors")
    if len(np.unique(labels)) < 2:
        raise ValueError("Need both bonafide and attack samples to fit a probe")
    if kind is ProbeKind.logreg:
        clf = LogisticRegression(C=C, max_iter=max_iter, random_state=seed)
    elif kind is ProbeKind.svm_linear:
        clf = SVC(kernel='linear', C=C, max_iter=max_iter, random_state=seed)
    else:
        clf = SVC(kernel='rbf', C=C, gamma=gamma, max_iter=max_iter, random_state=seed)
    pipeline = make_pipeline(StandardScaler(), clf)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', ConvergenceWarning)
        pipeline.fit(vectors, labels)
    converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
    if not converged:
        warnings.warn(f"Probe {kind.value} did not converge within {max_iter} iterations.")
    return ProbeModel(kind, pipeline, vectors.shape[1], converged)


def probe_scores(model: ProbeModel, vectors, sample_ids, labels) -> List[ScoreRecord]:
    """Score records of a fitted probe, one per row of `vectors`."""
    scores = model.scores(vectors)
    if len(sample_ids) != len(scores) or len(labels) != len(scores):
        raise ValueError(f"Got {len(sample_ids)} ids and {len(labels)} labels for {len(scores)} vectors")
    return [ScoreRecord(sid, label, score) for sid, label, score in zip(sample_ids, labels, scores)]
