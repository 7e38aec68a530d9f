import math

import pytest
import numpy as np
import torch

from viser.datasets.from_simulations import SteeringCorpus
from viser.datasets.manifest import AttackType, IrisSample, Label, load_manifest
from viser.evaluation.scoring import ScoreRecord, read_scores, score_samples, write_scores
from viser.models.backbones import TinyCNN
from viser.models.base import PADModel


def test_score_record():
    rec = ScoreRecord('a', 'attack', 0.7)
    assert rec.label is Label.attack
    assert rec.ok
    with pytest.raises(ValueError):
        ScoreRecord('a', 'attack', float('nan'))
    failed = ScoreRecord('b', 'bonafide', float('nan'), 'unreadable image')
    assert not failed.ok
    assert failed.to_record() == dict(sample_id='b', label='bonafide', score=None, error='unreadable image')


def test_write_and_read_scores(tmp_path):
    records = [ScoreRecord('a', 'attack', 0.25), ScoreRecord('b', 'bonafide', float('nan'), 'no embedding')]
    loaded = read_scores(write_scores(tmp_path / 'scores.jsonl', records))
    assert loaded[0] == records[0]
    assert loaded[1].error == 'no embedding'
    assert math.isnan(loaded[1].score)


def test_score_samples(tmp_path):
    corpus = SteeringCorpus(n_per_class=3)
    manifest = load_manifest(corpus.write(tmp_path)['manifest'], corpus.image_size)
    missing = IrisSample('gone', tmp_path / 'gone.png', Label.attack, AttackType.printout, 'steer')
    samples = list(manifest) + [missing]
    torch.manual_seed(0)
    model = PADModel(TinyCNN(2))
    with pytest.warns(UserWarning):
        records = score_samples(model, samples, corpus.image_size)
    assert [r.sample_id for r in records] == [s.sample_id for s in samples]
    assert [r.ok for r in records] == [True] * len(manifest) + [False]
    scores = np.array([r.score for r in records[:-1]])
    assert ((scores > 0) & (scores < 1)).all()
    assert records[-1].error == 'unreadable image'
    assert score_samples(model, [], corpus.image_size) == []
