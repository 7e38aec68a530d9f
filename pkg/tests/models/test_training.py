import dataclasses

import pytest
import numpy as np
import torch

from viser.datasets.from_simulations import SteeringCorpus
from viser.datasets.manifest import AttackType, load_manifest
from viser.evaluation.splits import SplitPlan
from viser.exceptions import ValidationError
from viser.models import training
from viser.models.cam import cam_mass_fraction
from viser.models.data import ImageCache, training_arrays
from viser.saliency.compile import compile_saliency
from viser.utils import read_jsonl


@pytest.mark.parametrize('descriptor, expected', [
    ('constant', ('constant',)),
    ('cosine', ('cosine',)),
    ('step:10:0.1', ('step', 10, 0.1)),
])
def test_parse_schedule(descriptor, expected):
    assert training.parse_schedule(descriptor) == expected


@pytest.mark.parametrize('descriptor', ['linear', 'step:10', 'step:0:0.1', 'step:a:b', 'cosine:3'])
def test_parse_schedule_invalid(descriptor):
    with pytest.raises(ValueError):
        training.parse_schedule(descriptor)


@pytest.mark.parametrize('descriptor, lrs', [
    ('constant', [1., 1., 1., 1.]),
    ('step:2:0.5', [1., 1., 0.5, 0.5]),
])
def test_make_lr_scheduler(descriptor, lrs):
    optimizer = torch.optim.SGD([torch.nn.Parameter(torch.zeros(1))], lr=1.)
    scheduler = training.make_lr_scheduler(optimizer, descriptor, 4)
    seen = []
    for _ in range(4):
        seen.append(optimizer.param_groups[0]['lr'])
        if scheduler is not None:
            scheduler.step()
    assert seen == lrs


def test_training_config_defaults_and_validate():
    config = training.TrainingConfig()
    assert (config.alpha, config.epochs, config.batch_size, config.lr, config.momentum) == (0.5, 50, 20, 0.005, 0.9)
    assert config.validate() == []
    bad = training.TrainingConfig(alpha=2., epochs=0, batch_size=0, lr=0., val_fraction=1., backbone='x',
                                  schedule='y')
    assert len(bad.validate()) == 7


def test_training_config_effective_and_fingerprint():
    xent = training.TrainingConfig()
    alpha0 = training.TrainingConfig(alpha=0., saliency_source='segmentation')
    assert xent.effective() == alpha0.effective()
    assert xent.fingerprint() == alpha0.fingerprint()
    assert xent.fingerprint() == dataclasses.replace(xent, seed=3, device='cpu').fingerprint()
    guided = training.TrainingConfig(saliency_source='segmentation')
    assert guided.fingerprint() != xent.fingerprint()
    assert xent.fingerprint(dict(run='a')) != xent.fingerprint(dict(run='b'))


def make_steering(tmp_path, n_per_class=24):
    corpus = SteeringCorpus(n_per_class=n_per_class)
    paths = corpus.write(tmp_path / 'steer')
    manifest = load_manifest(paths['manifest'], corpus.image_size)
    masks = {sid: corpus.region_a.astype(np.uint8) for sid in manifest.sample_ids}
    store = compile_saliency('segmentation', masks, manifest.sample_ids, corpus.image_size)
    split = SplitPlan(AttackType.synthetic, tuple(manifest.sample_ids), (), 0)
    return corpus, manifest, store, split


def steering_config(**kwargs):
    defaults = dict(backbone='tiny:4', epochs=40, batch_size=8, lr=0.05, image_size=(16, 16), val_fraction=0.,
                    seed=0)
    return training.TrainingConfig(**dict(defaults, **kwargs))


def test_xent_and_alpha_zero_checkpoints_identical(tmp_path):
    corpus, manifest, store, split = make_steering(tmp_path, 8)
    cache = ImageCache(corpus.image_size)
    xent = training.train_model(split, None, steering_config(epochs=3), manifest, tmp_path / 'xent', cache)
    alpha0 = training.train_model(split, store, steering_config(epochs=3, alpha=0., saliency_source='segmentation'),
                                  manifest, tmp_path / 'alpha0', cache)
    assert xent.fingerprint == alpha0.fingerprint
    a = torch.load(xent.checkpoint_path, weights_only=False)['state_dict']
    b = torch.load(alpha0.checkpoint_path, weights_only=False)['state_dict']
    assert a.keys() == b.keys()
    for key in a:
        assert torch.equal(a[key], b[key])


def test_training_is_deterministic(tmp_path):
    corpus, manifest, store, split = make_steering(tmp_path, 8)
    config = steering_config(epochs=2, alpha=0.5, saliency_source='segmentation')
    first = training.train_model(split, store, config, manifest)
    second = training.train_model(split, store, config, manifest)
    for (_, p), (_, q) in zip(first.model.net.state_dict().items(), second.model.net.state_dict().items()):
        assert torch.equal(p, q)
    assert first.log == second.log


def test_saliency_steers_cam_to_target_region(tmp_path):
    corpus, manifest, store, split = make_steering(tmp_path)
    cache = ImageCache(corpus.image_size)
    xent = training.train_model(split, None, steering_config(), manifest, image_cache=cache)
    guided = training.train_model(split, store, steering_config(alpha=0.9, saliency_source='segmentation'),
                                  manifest, image_cache=cache)
    attacks = [s for s in manifest if s.is_attack]
    images, _ = cache.get(attacks)
    frac_xent = cam_mass_fraction(xent.model, images, corpus.region_a)
    frac_guided = cam_mass_fraction(guided.model, images, corpus.region_a)
    assert frac_guided - frac_xent >= 0.15


def test_train_model_writes_checkpoint_and_log(tmp_path):
    corpus, manifest, store, split = make_steering(tmp_path, 8)
    config = steering_config(epochs=2, alpha=0.5, saliency_source='segmentation', val_fraction=0.25)
    result = training.train_model(split, store, config, manifest, tmp_path / 'run')
    assert result.checkpoint_path.exists()
    log = [rec for _, rec in read_jsonl(tmp_path / 'run' / 'train_log.jsonl')]
    assert [rec['epoch'] for rec in log] == [1, 2]
    assert all(rec['val_auroc'] is not None for rec in log)
    assert all(rec['saliency_mse'] >= 0 and np.isfinite(rec['total']) for rec in log)
    assert log == result.log


def test_train_model_errors(tmp_path):
    corpus, manifest, store, split = make_steering(tmp_path, 4)
    with pytest.raises(ValidationError):
        training.train_model(split, None, steering_config(saliency_source='segmentation'), manifest)
    with pytest.raises(ValidationError):
        training.train_model(split, store, steering_config(epochs=0), manifest)
    bonafide = tuple(s.sample_id for s in manifest if not s.is_attack)
    with pytest.raises(ValidationError):
        training.train_model(SplitPlan(AttackType.synthetic, bonafide, (), 0), None, steering_config(), manifest)
    with pytest.raises(ValidationError):
        training.train_model(split, store, steering_config(saliency_source='segmentation', image_size=(8, 8)),
                             manifest)


def test_unreadable_images_are_left_out_of_training(tmp_path):
    corpus, manifest, store, split = make_steering(tmp_path, 4)
    broken = [next(s for s in manifest if s.is_attack), next(s for s in manifest if not s.is_attack)]
    for sample in broken:
        sample.image_path.write_bytes(b'not an image')
    cache = ImageCache(corpus.image_size)
    with pytest.warns(UserWarning, match='unreadable'):
        input, target, dropped = training_arrays(list(manifest), store, corpus.image_size, cache)
    assert sorted(dropped) == sorted(s.sample_id for s in broken)
    assert input.shape[0] == len(target[0]) == len(target[2]) == len(manifest) - 2
    config = steering_config(epochs=2, alpha=0.5, saliency_source='segmentation')
    with pytest.warns(UserWarning, match='unreadable'):
        result = training.train_model(split, store, config, manifest, tmp_path / 'run', cache)
    assert result.n_degraded == 2
    log = [rec for _, rec in read_jsonl(tmp_path / 'run' / 'train_log.jsonl')]
    assert [rec['n_degraded'] for rec in log] == [2, 2]
