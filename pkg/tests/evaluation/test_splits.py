from pathlib import Path

import pytest

from viser.datasets.manifest import AttackType, DatasetManifest, IrisSample, Label
from viser.evaluation.splits import SplitPlan, bonafide_partition, make_loto_splits
from viser.exceptions import ValidationError


def sample(sid, attack, corpus='lab_a'):
    label = Label.bonafide if attack is AttackType.bonafide else Label.attack
    return IrisSample(sid, Path(f"/data/{sid}.png"), label, attack, corpus)


def make_manifest(n_bonafide=20, n_per_attack=3, attacks=None):
    samples = [sample(f"bf-{i}", AttackType.bonafide, ('lab_a', 'lab_b')[i % 2]) for i in range(n_bonafide)]
    for attack in attacks or AttackType.attacks():
        samples += [sample(f"{attack.value}-{i}", attack) for i in range(n_per_attack)]
    return DatasetManifest(tuple(samples), (16, 16))


@pytest.mark.parametrize('seed', [0, 1, 7])
def test_loto_splits(seed):
    manifest = make_manifest()
    plans = make_loto_splits(manifest, seed)
    assert [p.held_out_attack for p in plans] == list(AttackType.attacks())
    bonafide_test = {sid for sid in plans[0].test if manifest[sid].attack_type is AttackType.bonafide}
    for plan in plans:
        plan.check(manifest)
        train_types = {manifest[sid].attack_type for sid in plan.train}
        test_types = {manifest[sid].attack_type for sid in plan.test}
        assert plan.held_out_attack not in train_types
        assert test_types == {AttackType.bonafide, plan.held_out_attack}
        assert train_types == set(AttackType) - {plan.held_out_attack}
        assert len(plan.train) + len(plan.test) == len(manifest)
        assert {sid for sid in plan.test if manifest[sid].attack_type is AttackType.bonafide} == bonafide_test
        assert plan.seed == seed


def test_bonafide_partition_is_seeded_and_stratified():
    manifest = make_manifest()
    train, test = bonafide_partition(manifest, 3)
    assert (train, test) == bonafide_partition(manifest, 3)
    assert len(test) == 6
    assert {manifest[sid].source_corpus for sid in test} == {'lab_a', 'lab_b'}
    assert not set(train) & set(test)
    others = {tuple(bonafide_partition(manifest, seed)[1]) for seed in range(5)}
    assert len(others) > 1


def test_bonafide_partition_falls_back_unstratified():
    samples = [sample(f"bf-{i}", AttackType.bonafide, 'lab_a') for i in range(9)]
    samples.append(sample('bf-odd', AttackType.bonafide, 'lab_b'))
    manifest = DatasetManifest(tuple(samples))
    with pytest.warns(UserWarning, match='stratify'):
        train, test = bonafide_partition(manifest, 0)
    assert len(train) + len(test) == 10


@pytest.mark.parametrize('fraction', [0., 1., -0.1])
def test_bonafide_fraction_range(fraction):
    with pytest.raises(ValueError):
        bonafide_partition(make_manifest(), 0, fraction)


def test_missing_attack_type():
    manifest = make_manifest(attacks=AttackType.attacks()[:-1])
    with pytest.raises(ValidationError, match='artificial'):
        make_loto_splits(manifest, 0)


def test_split_plan_checks():
    manifest = make_manifest()
    with pytest.raises(ValueError):
        SplitPlan(AttackType.bonafide, (), (), 0)
    with pytest.raises(ValueError):
        SplitPlan(AttackType.printout, ('bf-0',), ('bf-0',), 0)
    leaky = SplitPlan(AttackType.printout, ('bf-0', 'printout-0'), ('bf-1', 'printout-1'), 0)
    with pytest.raises(ValidationError, match='held-out'):
        leaky.check(manifest)
    stray = SplitPlan(AttackType.printout, ('bf-0',), ('bf-1', 'diseased-0'), 0)
    with pytest.raises(ValidationError, match='other attack'):
        stray.check(manifest)
    no_bonafide = SplitPlan(AttackType.printout, ('bf-0',), ('printout-0',), 0)
    with pytest.raises(ValidationError, match='bonafide'):
        no_bonafide.check(manifest)
