"""Leave-one-attack-type-out splits.

Bonafide samples are partitioned once per seed into train and test; every split of that
seed shares the partition. All attacks except the held-out type go to train, the held-out
type goes to test.
"""
import logging
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import List, Tuple

from sklearn.model_selection import train_test_split

from viser.datasets.manifest import AttackType, DatasetManifest
from viser.exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    held_out_attack: AttackType
    train: Tuple[str, ...]
    test: Tuple[str, ...]
    seed: int

    def __post_init__(self):
        if self.held_out_attack is AttackType.bonafide:
            raise ValueError("`held_out_attack` cannot be bonafide")
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValueError(f"{len(overlap)} sample ids are in both train and test, e.g. {sorted(overlap)[0]!r}")

    def check(self, manifest: DatasetManifest):
        """Verify the partition rules against `manifest`. Raises `ValidationError`."""
        train_types = Counter(manifest[sid].attack_type for sid in self.train)
        test_types = Counter(manifest[sid].attack_type for sid in self.test)
        if train_types[self.held_out_attack]:
            raise ValidationError(f"Train partition holds {train_types[self.held_out_attack]} samples of the "
                                  f"held-out attack {self.held_out_attack.value!r}")
        stray = set(test_types) - {AttackType.bonafide, self.held_out_attack}
        if stray:
            raise ValidationError(f"Test partition holds other attack types: {sorted(t.value for t in stray)}")
        if not train_types[AttackType.bonafide] or not test_types[AttackType.bonafide]:
            raise ValidationError("Both partitions need bonafide samples")
        return self


def bonafide_partition(manifest: DatasetManifest, seed, test_fraction=0.3) -> Tuple[List[str], List[str]]:
    """Split the bonafide samples into `(train, test)` ids, stratified by source corpus.

    Falls back to an unstratified split (with a warning) when a corpus is too small to
    appear on both sides.
    """
    if not 0. < test_fraction < 1.:
        raise ValueError(f"`bonafide_test_fraction` needs to be in (0, 1), got {test_fraction}")
    bonafide = manifest.of_type(AttackType.bonafide)
    if len(bonafide) < 2:
        raise ValidationError(f"Need at least 2 bonafide samples to partition, got {len(bonafide)}")
    ids = [s.sample_id for s in bonafide]
    corpora = [s.source_corpus for s in bonafide]
    try:
        train, test = train_test_split(ids, test_size=test_fraction, random_state=seed, stratify=corpora)
    except ValueError as err:
        warnings.warn(f"Cannot stratify bonafide partition by corpus ({err}). Using an unstratified split.")
        train, test = train_test_split(ids, test_size=test_fraction, random_state=seed)
    return sorted(train), sorted(test)


def make_loto_splits(manifest: DatasetManifest, seed, bonafide_test_fraction=0.3) -> List[SplitPlan]:
    """One `SplitPlan` per attack type, in `AttackType` order.

    Arguments:
        manifest {DatasetManifest} -- Must hold bonafide samples and all seven attack types.
        seed {int} -- Seed of the bonafide partition.

    Keyword Arguments:
        bonafide_test_fraction {float} -- Share of bonafide samples in test. (default: {0.3})

    Returns:
        list -- Seven `SplitPlan`.
    """
    histogram = manifest.histogram()
    missing = [t.value for t in AttackType.attacks() if histogram[t] == 0]
    if missing:
        raise ValidationError(f"Manifest is missing attack types: {', '.join(missing)}")
    bona_train, bona_test = bonafide_partition(manifest, seed, bonafide_test_fraction)
    plans = []
    for held_out in AttackType.attacks():
        train = list(bona_train)
        test = list(bona_test)
        for sample in manifest:
            if sample.is_attack:
                (test if sample.attack_type is held_out else train).append(sample.sample_id)
        plans.append(SplitPlan(held_out, tuple(train), tuple(test), int(seed)))
    logger.debug("made splits", extra=dict(seed=seed, n_bonafide_train=len(bona_train),
                                           n_bonafide_test=len(bona_test)))
    return plans
