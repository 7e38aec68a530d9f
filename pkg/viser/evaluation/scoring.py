import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from viser import utils
from viser.datasets.manifest import Label
from viser.models.data import ImageCache

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreRecord:
    """PAD score of one sample, higher = more attack-like.

    A record with `error` set marks a sample that could not be scored; its score is NaN
    and metrics leave it out.
    """
    sample_id: str
    label: Label
    score: float
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'label', Label.parse(self.label))
        object.__setattr__(self, 'score', float(self.score))
        if self.error is None and not math.isfinite(self.score):
            raise ValueError(f"Score of {self.sample_id!r} is not finite: {self.score}")

    @property
    def ok(self):
        return self.error is None

    def to_record(self):
        rec = dict(sample_id=self.sample_id, label=self.label.value,
                   score=self.score if self.ok else None)
        if not self.ok:
            rec['error'] = self.error
        return rec

    @classmethod
    def from_record(cls, rec):
        score = rec['score']
        return cls(rec['sample_id'], rec['label'], float('nan') if score is None else score, rec.get('error', None))


def write_scores(path, records):
    return utils.write_jsonl(path, [r.to_record() for r in records])


def read_scores(path) -> List[ScoreRecord]:
    return [ScoreRecord.from_record(rec) for _, rec in utils.read_jsonl(path)]


def score_samples(model, samples, image_size=(224, 224), image_cache=None, batch_size=64) -> List[ScoreRecord]:
    """Score `samples` with a trained `PADModel`.

    The score is the softmax probability of the attack class. Samples whose image cannot
    be read get an error record and the rest are still scored.

    Arguments:
        model {PADModel} -- Trained model (see `viser.models.base.load_checkpoint`).
        samples {list of IrisSample} -- Samples to score.

    Keyword Arguments:
        image_size {tuple} -- (height, width) the model was trained at. (default: {(224, 224)})
        image_cache {ImageCache} -- Shared cache at `image_size`. (default: {None})
        batch_size {int} -- Batch size (default: {64})

    Returns:
        list -- One `ScoreRecord` per sample, in input order.
    """
    samples = list(samples)
    if not samples:
        return []
    image_cache = ImageCache(image_size) if image_cache is None else image_cache
    images, degraded = image_cache.get(samples)
    degraded = set(degraded)
    ok = np.array([s.sample_id not in degraded for s in samples], dtype=bool)
    scores = np.full(len(samples), np.nan)
    if ok.any():
        scores[ok] = model.predict_proba(images[ok], batch_size, True)
    records = [ScoreRecord(s.sample_id, s.label, score) if keep else
               ScoreRecord(s.sample_id, s.label, float('nan'), 'unreadable image')
               for s, score, keep in zip(samples, scores, ok)]
    if degraded:
        logger.warning("samples not scored", extra=dict(n_errors=len(degraded), n_samples=len(samples)))
    return records

