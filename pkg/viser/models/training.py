"""Training of the cross-entropy baseline and the saliency-guided variants."""
import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch
import torchtuples as tt
from sklearn.model_selection import train_test_split

from viser import utils
from viser.evaluation.metrics import auroc
from viser.exceptions import ValidationError
from viser.models.backbones import is_backbone_descriptor, make_backbone
from viser.models.base import PADModel, save_checkpoint
from viser.models.data import ImageCache, labels_of, training_arrays
from viser.models.loss import SaliencyGuidedLoss

logger = logging.getLogger(__name__)

SCHEDULES = ('constant', 'step:<epochs>:<gamma>', 'cosine')


@dataclass
class TrainingConfig:
    """Settings of one training run. Defaults: SGD with momentum, learning rate 0.005,
    50 epochs, batch 20, equal weighting of the two loss terms.

    `alpha = 0` and `saliency_source = None` describe the same run (plain cross-entropy);
    `effective()` maps both to one canonical form.
    """
    alpha: float = 0.5
    epochs: int = 50
    batch_size: int = 20
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.
    schedule: str = 'constant'
    seed: int = 0
    saliency_source: Optional[str] = None
    image_size: Tuple[int, int] = (224, 224)
    backbone: str = 'densenet121'
    val_fraction: float = 0.1
    device: Optional[str] = None

    def validate(self) -> List[str]:
        """Field-level problems, empty when the config is usable."""
        msgs = []
        if not 0. <= self.alpha <= 1.:
            msgs.append(f"training.alpha: needs to be in [0, 1], got {self.alpha}")
        if self.epochs < 1:
            msgs.append(f"training.epochs: needs to be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            msgs.append(f"training.batch_size: needs to be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            msgs.append(f"training.lr: needs to be > 0, got {self.lr}")
        if not 0. <= self.val_fraction < 1.:
            msgs.append(f"training.val_fraction: needs to be in [0, 1), got {self.val_fraction}")
        if not is_backbone_descriptor(self.backbone):
            msgs.append(f"training.backbone: unknown descriptor {self.backbone!r}")
        try:
            parse_schedule(self.schedule)
        except ValueError as err:
            msgs.append(f"training.schedule: {err}")
        return msgs

    def effective(self):
        """Canonical form: no saliency source when the weight is zero and vice versa."""
        if self.alpha == 0 or self.saliency_source is None:
            return dataclasses.replace(self, alpha=0., saliency_source=None)
        return self

    def fingerprint(self, extra=None):
        """Fingerprint of everything that shapes the trained model except the seed."""
        fields = dataclasses.asdict(self.effective())
        fields.pop('seed')
        fields.pop('device')
        fields['image_size'] = list(fields['image_size'])
        if extra:
            fields['extra'] = extra
        return utils.fingerprint(fields)


@dataclass
class TrainingResult:
    model: PADModel
    log: List[dict] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    fingerprint: str = ''
    n_zero_cams: int = 0
    n_degraded: int = 0


def parse_schedule(descriptor):
    """Parse a learning-rate schedule descriptor.

    Returns:
        tuple -- `('constant',)`, `('step', step_epochs, gamma)` or `('cosine',)`.
    """
    name, *args = str(descriptor).split(':')
    if name == 'constant' and not args:
        return ('constant',)
    if name == 'cosine' and not args:
        return ('cosine',)
    if name == 'step' and len(args) == 2:
        try:
            step, gamma = int(args[0]), float(args[1])
        except ValueError:
            step = gamma = None
        if step and step > 0 and gamma is not None and gamma > 0:
            return ('step', step, gamma)
    raise ValueError(f"Unknown schedule {descriptor!r}. Use one of {', '.join(SCHEDULES)}")


def make_lr_scheduler(optimizer, descriptor, epochs):
    schedule = parse_schedule(descriptor)
    if schedule[0] == 'step':
        return torch.optim.lr_scheduler.StepLR(optimizer, step_size=schedule[1], gamma=schedule[2])
    if schedule[0] == 'cosine':
        return torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=epochs)
    return None


class EpochLog(tt.callbacks.Callback):
    """Accumulates the loss terms over each epoch, steps the learning-rate schedule and
    computes the validation AUROC.
    """
    def __init__(self, val_input=None, val_labels=None, lr_scheduler=None, batch_size=256, n_degraded=0):
        self.val_input = val_input
        self.val_labels = val_labels
        self.lr_scheduler = lr_scheduler
        self.batch_size = batch_size
        self.n_degraded = n_degraded
        self.records = []
        self.epoch = 0

    def on_epoch_start(self):
        self._sums = np.zeros(3)
        self._n_batches = 0

    def on_batch_end(self):
        bd = self.model.loss.last_breakdown
        self._sums += [float(bd.ce), float(bd.saliency_mse), float(bd.total)]
        self._n_batches += 1

    def _val_auroc(self):
        if self.val_input is None or len(np.unique(self.val_labels)) < 2:
            return None
        scores = self.model.predict_proba(self.val_input, self.batch_size, True)
        self.model.net.train()
        return auroc(scores, self.val_labels)

    def on_epoch_end(self):
        self.epoch += 1
        ce, mse, total = self._sums / max(self._n_batches, 1)
        record = dict(epoch=self.epoch, ce=ce, saliency_mse=mse, total=total, val_auroc=self._val_auroc(),
                      n_degraded=self.n_degraded)
        self.records.append(record)
        if self.lr_scheduler is not None:
            self.lr_scheduler.step()
        if not math.isfinite(total):
            logger.error("non-finite training loss, stopping", extra=record)
            return True
        logger.info("epoch", extra=record)


def _carve_validation(samples, fraction, seed):
    if fraction <= 0:
        return samples, []
    labels = labels_of(samples)
    try:
        fit, val = train_test_split(samples, test_size=fraction, random_state=seed, stratify=labels)
    except ValueError as err:
        warnings.warn(f"No validation split ({err}). Validation AUROC is not computed.")
        return samples, []
    return fit, val


def _check_store(store, sample_ids, image_size):
    for sid in sample_ids:
        smap = store.get(sid)
        if smap is not None and smap.shape != tuple(image_size):
            raise ValidationError(f"Saliency store {store.source.value!r} has shape {smap.shape} for {sid!r}, "
                                  f"expected {tuple(image_size)}")


def train_model(split, saliency_store, config: TrainingConfig, manifest, run_dir=None,
                image_cache=None, extra_fingerprint=None) -> TrainingResult:
    """Train one PAD classifier on the train partition of `split`.

    Samples without a saliency target contribute only the cross-entropy term. The run is
    deterministic given `config.seed`: the backbone is initialized and the data shuffled
    from torch's seeded stream.

    Arguments:
        split {SplitPlan} -- Train/test partition; only `split.train` is used.
        saliency_store {SaliencyStore} -- Targets for `config.saliency_source`, or 'None'.
        config {TrainingConfig} -- Settings.
        manifest {DatasetManifest} -- Resolves sample ids.

    Keyword Arguments:
        run_dir {Path} -- If given, `checkpoint.pt` and `train_log.jsonl` are written here.
            (default: {None})
        image_cache {ImageCache} -- Shared image cache. (default: {None})
        extra_fingerprint {dict} -- Additional fields folded into the checkpoint fingerprint.
            (default: {None})

    Returns:
        TrainingResult -- Model, per-epoch log, checkpoint path and fingerprint.
    """
    config = config.effective()
    msgs = config.validate()
    if msgs:
        raise ValidationError('; '.join(msgs))
    if config.saliency_source is None:
        saliency_store = None
    elif saliency_store is None:
        raise ValidationError(f"Saliency source {config.saliency_source!r} needs a compiled saliency store")
    samples = manifest.subset(split.train)
    counts = np.bincount(labels_of(samples), minlength=2)
    if counts.min() == 0:
        missing = 'bonafide' if counts[0] == 0 else 'attack'
        raise ValidationError(f"Train partition of {split.held_out_attack.value!r} has no {missing} samples")
    if saliency_store is not None:
        _check_store(saliency_store, split.train, config.image_size)

    utils.seed_everything(config.seed)
    fit_samples, val_samples = _carve_validation(samples, config.val_fraction, config.seed)
    image_cache = ImageCache(config.image_size) if image_cache is None else image_cache
    input, target, dropped = training_arrays(fit_samples, saliency_store, config.image_size, image_cache)
    if len(np.unique(target[0])) < 2:
        raise ValidationError(f"Train partition of {split.held_out_attack.value!r} has readable images "
                              f"of one class only")
    val_input = val_labels = None
    if val_samples:
        val_input, val_dropped = image_cache.get(val_samples)
        if val_dropped:
            bad = set(val_dropped)
            keep = np.array([s.sample_id not in bad for s in val_samples], dtype=bool)
            val_input, val_samples = val_input[keep], [s for s, k in zip(val_samples, keep) if k]
            dropped = dropped + val_dropped
        val_labels = labels_of(val_samples)

    torch.manual_seed(config.seed)
    net = make_backbone(config.backbone)
    optimizer = torch.optim.SGD(net.parameters(), lr=config.lr, momentum=config.momentum,
                                weight_decay=config.weight_decay)
    loss = SaliencyGuidedLoss(config.alpha)
    model = PADModel(net, loss, optimizer, config.device)
    epoch_log = EpochLog(val_input, val_labels, make_lr_scheduler(optimizer, config.schedule, config.epochs),
                         config.batch_size, len(dropped))
    logger.info("training", extra=dict(held_out_attack=split.held_out_attack.value, seed=config.seed,
                                       n_train=len(target[0]), n_val=len(val_samples), n_degraded=len(dropped),
                                       n_with_saliency=int(target[2].sum()), alpha=config.alpha,
                                       saliency_source=config.saliency_source))
    model.fit(input, target, config.batch_size, config.epochs, [epoch_log], verbose=False)
    if loss.n_zero_cams:
        warnings.warn(f"Saliency term skipped for {loss.n_zero_cams} sample-steps with an all-zero CAM.")

    fingerprint = config.fingerprint(extra_fingerprint)
    result = TrainingResult(model, epoch_log.records, None, fingerprint, loss.n_zero_cams, len(dropped))
    if run_dir is not None:
        run_dir = Path(run_dir)
        result.checkpoint_path = save_checkpoint(run_dir / 'checkpoint.pt', net, fingerprint, config.seed,
                                                 dataclasses.asdict(config))
        utils.write_jsonl(run_dir / 'train_log.jsonl', epoch_log.records)
    return result
