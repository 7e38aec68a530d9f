import pytest

from viser.config import load_config
from viser.datasets.from_simulations import write_fixture_experiment
from viser.datasets.manifest import AttackType, load_manifest
from viser.evaluation import protocol
from viser.evaluation.protocol import METHODS, RunStore, get_method, run_protocol
from viser.exceptions import ProtocolError
from viser.saliency.compile import compile_saliency, load_raw_inputs, save_store
from viser.saliency.maps import SaliencySource


@pytest.fixture
def experiment(tmp_path, monkeypatch):
    monkeypatch.delenv('VISER_OUTPUT_ROOT', raising=False)
    config = load_config(write_fixture_experiment(tmp_path / 'exp'))
    config.check()
    manifest = load_manifest(config.manifest, config.image_size)
    return config, manifest, config.resolved_output_root


def test_methods():
    assert 'xent' in METHODS
    assert get_method('et_initial_denoised').saliency_source.value == 'et_initial_denoised'
    assert get_method('embed_svm_rbf').is_probe
    with pytest.raises(ProtocolError):
        get_method('nope')


def test_protocol_runs_and_resumes(experiment):
    config, manifest, root = experiment
    outcome = run_protocol(config, manifest, progress=False)
    assert outcome.complete
    assert len(outcome.results) == 14
    assert len(outcome.executed) == 14
    for result in outcome.results:
        assert result.verify()
        assert 0. <= result.auroc <= 1.
        test_attacks = {manifest[r.sample_id].attack_type for r in result.scores}
        assert test_attacks == {AttackType.bonafide, result.held_out_attack}
    assert len({r.protocol_fingerprint for r in outcome.results}) == 1
    assert len({r.run_fingerprint for r in outcome.results}) == 1

    store = RunStore(root)
    (store.cell_dir('xent', 'diseased', 1) / protocol.RESULT_FILE).unlink()
    again = run_protocol(config, manifest, progress=False)
    assert again.executed == [('xent', 'diseased', 1)]
    assert len(again.cached) == 13
    assert len(again.results) == 14
    assert len(store.load_all()) == 14


def test_changed_settings_rerun(experiment):
    config, manifest, root = experiment
    kwargs = dict(attacks=['printout'], seeds=[0], progress=False)
    run_protocol(config, manifest, **kwargs)
    assert len(run_protocol(config, manifest, **kwargs).cached) == 1
    config.training.lr = 0.01
    outcome = run_protocol(config, manifest, **kwargs)
    assert outcome.executed == [('xent', 'printout', 0)]


def test_failed_cells_are_recorded(experiment, monkeypatch):
    config, manifest, root = experiment

    def broken(*args, **kwargs):
        raise RuntimeError('scoring broke')

    kwargs = dict(attacks=['printout'], seeds=[0], progress=False)
    with monkeypatch.context() as m:
        m.setattr(protocol, 'score_samples', broken)
        outcome = run_protocol(config, manifest, **kwargs)
    assert not outcome.complete
    assert outcome.failed == {('xent', 'printout', 0): 'RuntimeError: scoring broke'}
    assert outcome.results == []
    store = RunStore(root)
    assert store.failures()[0]['error'] == 'RuntimeError: scoring broke'
    outcome = run_protocol(config, manifest, **kwargs)
    assert outcome.complete
    assert store.failures() == []


def test_saliency_method_needs_store(experiment):
    config, manifest, root = experiment
    with pytest.raises(ProtocolError):
        run_protocol(config, manifest, methods=['segmentation'], seeds=[0], progress=False)
    inputs = load_raw_inputs('segmentation', config.saliency, manifest.sample_ids, config.image_size)
    save_store(compile_saliency('segmentation', inputs, manifest.sample_ids, config.image_size, config.saliency),
               root)
    outcome = run_protocol(config, manifest, methods=['segmentation'], attacks=['synthetic'], seeds=[0],
                           progress=False)
    assert outcome.complete
    assert outcome.results[0].method == 'segmentation'
    assert (RunStore(root).cell_dir('segmentation', 'synthetic', 0) / protocol.CHECKPOINT_FILE).exists()


def test_stale_saliency_store_is_refused(experiment):
    config, manifest, root = experiment
    inputs = load_raw_inputs('hand_high', config.saliency, manifest.sample_ids, config.image_size)
    store = compile_saliency('hand_high', inputs, manifest.sample_ids, config.image_size, config.saliency)
    save_store(store, root)
    config.saliency.kernels['hand_high'] += 2
    with pytest.raises(ProtocolError, match='compile-saliency'):
        run_protocol(config, manifest, methods=['hand_high'], attacks=['synthetic'], seeds=[0], progress=False)
    with pytest.raises(ProtocolError):
        run_protocol(config, manifest, methods=['hand_high'], attacks=['synthetic'], seeds=[0], progress=False,
                     saliency_stores={SaliencySource.hand_high: store})
    with pytest.raises(ProtocolError):
        protocol.CellContext(config, manifest, root).store(SaliencySource.hand_high)
    assert not RunStore(root).cell_dir('hand_high', 'synthetic', 0).exists()


def test_probe_method(experiment):
    config, manifest, root = experiment
    outcome = run_protocol(config, manifest, methods=['embed_logreg'], seeds=[0], progress=False)
    assert outcome.complete
    assert len(outcome.results) == 7
    assert all(r.n_errors == 0 for r in outcome.results)
    assert (root / 'embeddings').is_dir()
    assert not any((RunStore(root).cell_dir('embed_logreg', a, 0) / protocol.CHECKPOINT_FILE).exists()
                   for a in AttackType.attacks())


def test_train_cell_reuses_checkpoint(experiment):
    config, manifest, root = experiment
    ctx = protocol.CellContext(config, manifest, root)
    _, path, reused = protocol.train_cell('xent', 'printout', 0, ctx)
    assert path.exists() and not reused
    _, again, reused = protocol.train_cell('xent', 'printout', 0, ctx)
    assert again == path and reused
    _, _, reused = protocol.train_cell('xent', 'printout', 1, ctx)
    assert not reused
    with pytest.raises(ProtocolError):
        protocol.train_cell('embed_logreg', 'printout', 0, ctx)


def test_bonafide_cannot_be_held_out(experiment):
    config, manifest, _ = experiment
    with pytest.raises(ProtocolError):
        run_protocol(config, manifest, attacks=['bonafide'], progress=False)
