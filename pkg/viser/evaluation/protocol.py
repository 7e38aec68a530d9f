"""Leave-one-attack-type-out protocol: every (method, held-out attack, seed) cell is
trained (or, for embedding probes, fitted), scored on its test partition and persisted
under `<root>/runs/<method>/<attack>/<seed>/`.

A cell is complete when its `result.json` exists and carries the current run
fingerprint; complete cells are skipped, so an interrupted protocol resumes where it
stopped.
"""
import dataclasses
import logging
import multiprocessing
import signal
import traceback
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from tqdm import tqdm

from viser import utils
from viser.datasets.manifest import AttackType, DatasetManifest
from viser.embeddings.extractors import make_extractor
from viser.embeddings.probes import ProbeKind, fit_probe, probe_scores
from viser.embeddings.store import EmbeddingStore, extract_embeddings
from viser.evaluation.metrics import apcer_at_bpcer, auroc
from viser.evaluation.scoring import ScoreRecord, read_scores, score_samples, write_scores
from viser.evaluation.splits import make_loto_splits
from viser.exceptions import ProtocolError
from viser.models.base import load_checkpoint
from viser.models.data import ImageCache
from viser.models.training import train_model
from viser.saliency.compile import load_store, saliency_fingerprint
from viser.saliency.maps import SaliencySource

logger = logging.getLogger(__name__)

RESULT_FILE = 'result.json'
SCORES_FILE = 'scores.jsonl'
FAILED_FILE = 'failed.json'
CHECKPOINT_FILE = 'checkpoint.pt'


@dataclass(frozen=True)
class MethodSpec:
    """A protocol method: a CNN trained with an optional saliency source, or a probe on
    frozen embeddings.
    """
    name: str
    saliency_source: Optional[SaliencySource] = None
    probe_kind: Optional[ProbeKind] = None

    @property
    def is_probe(self):
        return self.probe_kind is not None


METHODS: Dict[str, MethodSpec] = {spec.name: spec for spec in [
    MethodSpec('xent'),
    *(MethodSpec(source.value, saliency_source=source) for source in SaliencySource),
    *(MethodSpec(f"embed_{kind.value}", probe_kind=kind) for kind in ProbeKind),
]}


def get_method(name) -> MethodSpec:
    try:
        return METHODS[name]
    except KeyError:
        raise ProtocolError(f"Unknown method {name!r}. Known: {', '.join(METHODS)}") from None


@dataclass
class RunResult:
    method: str
    held_out_attack: AttackType
    seed: int
    scores: List[ScoreRecord]
    auroc: float
    apcer_at_bpcer1: float
    threshold: float = float('nan')
    achieved_bpcer: float = float('nan')
    bpcer_target: float = 0.01
    run_fingerprint: str = ''
    protocol_fingerprint: str = ''
    config_fingerprint: str = ''
    n_errors: int = 0

    @classmethod
    def from_scores(cls, method, held_out_attack, seed, scores, bpcer_target=0.01, **fingerprints):
        scores = list(scores)
        apcer = apcer_at_bpcer(scores, bpcer_target)
        return cls(method, AttackType.parse(held_out_attack), int(seed), scores, auroc(scores), apcer.apcer,
                   apcer.threshold, apcer.achieved_bpcer, bpcer_target,
                   n_errors=sum(not r.ok for r in scores), **fingerprints)

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.method, self.held_out_attack.value, self.seed)

    def verify(self, tol=1e-12):
        """True when the stored metrics match a recomputation from the stored scores."""
        apcer = apcer_at_bpcer(self.scores, self.bpcer_target)
        return abs(auroc(self.scores) - self.auroc) <= tol and abs(apcer.apcer - self.apcer_at_bpcer1) <= tol

    def summary(self):
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != 'scores'}
        out['held_out_attack'] = self.held_out_attack.value
        return out


class RunStore:
    """Result store under `<root>/runs/`. Writes are atomic per file; `result.json` is
    written last and marks a cell complete.
    """
    def __init__(self, root):
        self.root = Path(root) / 'runs'

    def cell_dir(self, method, attack, seed):
        return self.root / method / AttackType.parse(attack).value / str(int(seed))

    def save(self, result: RunResult):
        directory = self.cell_dir(*result.key)
        write_scores(directory / SCORES_FILE, result.scores)
        utils.atomic_write_json(directory / RESULT_FILE, result.summary())
        failed = directory / FAILED_FILE
        if failed.exists():
            failed.unlink()
        return directory

    def save_failure(self, method, attack, seed, error):
        utils.atomic_write_json(self.cell_dir(method, attack, seed) / FAILED_FILE,
                                dict(method=method, held_out_attack=AttackType.parse(attack).value,
                                     seed=int(seed), error=error))

    def summary(self, method, attack, seed):
        path = self.cell_dir(method, attack, seed) / RESULT_FILE
        return utils.read_json(path) if path.exists() else None

    def is_complete(self, method, attack, seed, run_fingerprint=None):
        summary = self.summary(method, attack, seed)
        if summary is None or not (self.cell_dir(method, attack, seed) / SCORES_FILE).exists():
            return False
        return run_fingerprint is None or summary.get('run_fingerprint') == run_fingerprint

    def load(self, method, attack, seed) -> RunResult:
        directory = self.cell_dir(method, attack, seed)
        summary = utils.read_json(directory / RESULT_FILE)
        scores = read_scores(directory / SCORES_FILE)
        summary['held_out_attack'] = AttackType.parse(summary['held_out_attack'])
        return RunResult(scores=scores, **summary)

    def load_all(self, methods=None) -> List[RunResult]:
        """Every complete result in the store, optionally only for `methods`."""
        out = []
        if not self.root.exists():
            return out
        for path in sorted(self.root.glob(f"*/*/*/{RESULT_FILE}")):
            seed_dir = path.parent
            method, attack, seed = seed_dir.parent.parent.name, seed_dir.parent.name, seed_dir.name
            if methods is not None and method not in methods:
                continue
            if (seed_dir / SCORES_FILE).exists():
                out.append(self.load(method, attack, int(seed)))
        return out

    def failures(self):
        if not self.root.exists():
            return []
        return [utils.read_json(p) for p in sorted(self.root.glob(f"*/*/*/{FAILED_FILE}"))]


def check_store(store, config):
    """Raise `ProtocolError` unless `store` was compiled with the saliency settings and image
    size of `config`.
    """
    source = SaliencySource(store.source)
    expected = saliency_fingerprint(source, config.saliency, config.image_size)
    if store.fingerprint != expected:
        raise ProtocolError(f"Saliency store {source.value!r} was compiled with other settings "
                            f"(fingerprint {store.fingerprint[:12] or 'none'}, expected {expected[:12]}). "
                            f"Run `viser compile-saliency {source.value} --force`.")
    return store


def protocol_fingerprint(config, manifest: DatasetManifest):
    """Fingerprint of what makes results of different methods comparable."""
    return utils.fingerprint(dict(manifest=manifest.content_hash(), image_size=list(config.image_size),
                                  bonafide_test_fraction=config.protocol.bonafide_test_fraction,
                                  bpcer_target=config.protocol.bpcer_target))


def training_config_for(spec: MethodSpec, config, seed):
    """The `TrainingConfig` of one CNN cell."""
    source = spec.saliency_source.value if spec.saliency_source is not None else None
    tcfg = dataclasses.replace(config.training, seed=int(seed), saliency_source=source,
                               image_size=tuple(config.image_size))
    return tcfg.effective()


def run_fingerprint(spec: MethodSpec, config, protocol_fp, extractor_id=None):
    """Fingerprint of the settings of one method's runs, seed excluded."""
    fields = dict(method=spec.name, protocol=protocol_fp)
    if spec.is_probe:
        fields.update(probe=dataclasses.asdict(config.probe), extractor=extractor_id)
    else:
        fields['training'] = training_config_for(spec, config, 0).fingerprint()
        if spec.saliency_source is not None:
            fields['saliency'] = saliency_fingerprint(spec.saliency_source, config.saliency, config.image_size)
    return utils.fingerprint(fields)


@dataclass
class ProtocolOutcome:
    results: List[RunResult] = field(default_factory=list)
    executed: List[Tuple[str, str, int]] = field(default_factory=list)
    cached: List[Tuple[str, str, int]] = field(default_factory=list)
    failed: Dict[Tuple[str, str, int], str] = field(default_factory=dict)
    interrupted: bool = False

    @property
    def complete(self):
        return not self.failed and not self.interrupted


class CellContext:
    """Shared read-only state of the cells run in one process."""
    def __init__(self, config, manifest, root, extractor_id=None, stores=None):
        self.config = config
        self.manifest = manifest
        self.root = Path(root)
        self.extractor_id = extractor_id
        self.stores = dict(stores or {})
        self.image_cache = ImageCache(config.image_size)
        self.protocol_fp = protocol_fingerprint(config, manifest)
        self.config_fp = config.fingerprint()
        self._embeddings = None

    def store(self, source):
        if source not in self.stores:
            self.stores[source] = check_store(load_store(self.root, source), self.config)
        return self.stores[source]

    def embeddings(self):
        if self._embeddings is None:
            self._embeddings = EmbeddingStore(self.root, self.extractor_id).load(self.manifest.sample_ids)
        return self._embeddings


def _run_probe(spec, plan, ctx):
    emb = ctx.embeddings()
    train_ids = [sid for sid in plan.train if sid in emb.vectors]
    train = ctx.manifest.subset(train_ids)
    probe = fit_probe(emb.matrix(train_ids), [s.label.target for s in train], spec.probe_kind,
                      ctx.config.probe.C, ctx.config.probe.gamma, ctx.config.probe.max_iter, plan.seed)
    test = ctx.manifest.subset(plan.test)
    have = [s for s in test if s.sample_id in emb.vectors]
    scored = {r.sample_id: r for r in probe_scores(probe, emb.matrix([s.sample_id for s in have]),
                                                   [s.sample_id for s in have], [s.label for s in have])}
    return [scored.get(s.sample_id, None) or ScoreRecord(s.sample_id, s.label, float('nan'), 'no embedding')
            for s in test]


def _plan_for(ctx, attack, seed):
    attack = AttackType.parse(attack)
    return next(p for p in make_loto_splits(ctx.manifest, seed, ctx.config.protocol.bonafide_test_fraction)
                if p.held_out_attack is attack)


def train_cell(method, attack, seed, ctx: CellContext, plan=None):
    """Train the CNN of one protocol cell, reusing `checkpoint.pt` in the cell directory
    when it carries the current fingerprint.

    Returns:
        tuple -- `(model, checkpoint_path, reused)`.
    """
    spec = get_method(method)
    if spec.is_probe:
        raise ProtocolError(f"Method {method!r} is an embedding probe and has no network to train")
    plan = _plan_for(ctx, attack, seed) if plan is None else plan
    run_fp = run_fingerprint(spec, ctx.config, ctx.protocol_fp, ctx.extractor_id)
    tcfg = training_config_for(spec, ctx.config, seed)
    run_dir = RunStore(ctx.root).cell_dir(method, attack, seed)
    path = run_dir / CHECKPOINT_FILE
    expected = tcfg.fingerprint(dict(run=run_fp))
    if path.exists():
        model, blob = load_checkpoint(path, tcfg.device)
        if blob['fingerprint'] == expected and blob['seed'] == int(seed):
            logger.info("reusing checkpoint", extra=dict(method=method, held_out_attack=plan.held_out_attack.value,
                                                         seed=seed))
            return model, path, True
    store = ctx.store(spec.saliency_source) if tcfg.saliency_source is not None else None
    trained = train_model(plan, store, tcfg, ctx.manifest, run_dir, ctx.image_cache,
                          extra_fingerprint=dict(run=run_fp))
    return trained.model, trained.checkpoint_path, False


def run_cell(method, attack, seed, ctx: CellContext, plan=None) -> RunResult:
    """Train (or fit), score and persist one protocol cell."""
    spec = get_method(method)
    config = ctx.config
    plan = _plan_for(ctx, attack, seed) if plan is None else plan
    run_fp = run_fingerprint(spec, config, ctx.protocol_fp, ctx.extractor_id)
    if spec.is_probe:
        scores = _run_probe(spec, plan, ctx)
    else:
        model, _, _ = train_cell(method, attack, seed, ctx, plan)
        scores = score_samples(model, ctx.manifest.subset(plan.test), config.image_size, ctx.image_cache)
    result = RunResult.from_scores(method, attack, seed, scores, config.protocol.bpcer_target,
                                   run_fingerprint=run_fp, protocol_fingerprint=ctx.protocol_fp,
                                   config_fingerprint=ctx.config_fp)
    RunStore(ctx.root).save(result)
    logger.info("run complete", extra=dict(method=method, held_out_attack=result.held_out_attack.value, seed=seed,
                                           auroc=result.auroc, apcer=result.apcer_at_bpcer1,
                                           n_errors=result.n_errors))
    return result


_WORKER_CTX = None


def _worker_init(config, manifest, root, extractor_id):
    global _WORKER_CTX
    # the parent handles Ctrl-C and lets in-flight cells finish
    signal.signal(signal.SIGINT, signal.SIG_IGN)
    _WORKER_CTX = CellContext(config, manifest, root, extractor_id)


def _worker_run(method, attack, seed):
    run_cell(method, attack, seed, _WORKER_CTX)
    return (method, attack, seed)


def _prepare_embeddings(config, manifest, root, extractor=None):
    extractor = extractor or make_extractor(config.extractor)
    extract_embeddings(extractor, list(manifest), root, config.image_size, config.extractor.batch_size,
                       config.extractor.parallelism)
    return extractor.extractor_id


def run_protocol(config, manifest: DatasetManifest, methods=None, attacks=None, seeds=None, root=None,
                 jobs=None, saliency_stores=None, extractor=None, progress=True) -> ProtocolOutcome:
    """Run the leave-one-attack-type-out protocol, skipping completed cells.

    Failures of single cells are recorded (in the outcome and as `failed.json` in the cell
    directory) and the protocol continues. On Ctrl-C no new cells are started, in-flight
    cells finish and the outcome is returned with `interrupted` set.

    Arguments:
        config {ExperimentConfig} -- Experiment configuration.
        manifest {DatasetManifest} -- Samples.

    Keyword Arguments:
        methods {list} -- Method names. If 'None' use `config.protocol.methods`. (default: {None})
        attacks {list} -- Held-out attack types. If 'None' all seven. (default: {None})
        seeds {list} -- Seeds. If 'None' use `config.protocol.seeds`. (default: {None})
        root {Path} -- Output root. If 'None' use the config's. (default: {None})
        jobs {int} -- Worker processes. If 'None' use `config.protocol.jobs`. (default: {None})
        saliency_stores {dict} -- Preloaded stores by `SaliencySource`. (default: {None})
        extractor {Extractor} -- Extractor for the embedding methods. If 'None' built from
            `config.extractor`. (default: {None})
        progress {bool} -- Show a progress bar on stderr. (default: {True})

    Returns:
        ProtocolOutcome -- Results of all requested cells that are complete, and which
            cells were executed, cached or failed.
    """
    methods = list(methods or config.protocol.methods)
    specs = [get_method(m) for m in methods]
    attacks = [AttackType.parse(a) for a in (attacks or AttackType.attacks())]
    if AttackType.bonafide in attacks:
        raise ProtocolError("bonafide cannot be a held-out attack")
    seeds = [int(s) for s in (config.protocol.seeds if seeds is None else seeds)]
    root = Path(root) if root is not None else config.resolved_output_root
    jobs = jobs or config.protocol.jobs
    runs = RunStore(root)
    protocol_fp = protocol_fingerprint(config, manifest)

    stores = dict(saliency_stores or {})
    for spec in specs:
        source = spec.saliency_source
        if source is None:
            continue
        if source not in stores:
            try:
                stores[source] = load_store(root, source)
            except FileNotFoundError as err:
                raise ProtocolError(str(err)) from None
        check_store(stores[source], config)

    extractor_id = extractor.extractor_id if extractor is not None else None
    if any(spec.is_probe for spec in specs) and extractor_id is None:
        extractor_id = make_extractor(config.extractor).extractor_id
    run_fps = {spec.name: run_fingerprint(spec, config, protocol_fp, extractor_id) for spec in specs}

    outcome = ProtocolOutcome()
    cells = [(spec.name, attack.value, seed) for spec in specs for attack in attacks for seed in seeds]
    pending = []
    for cell in cells:
        if runs.is_complete(*cell, run_fps[cell[0]]):
            outcome.cached.append(cell)
        else:
            pending.append(cell)
    logger.info("protocol", extra=dict(n_cells=len(cells), n_cached=len(outcome.cached), n_pending=len(pending),
                                       jobs=jobs))

    if any(get_method(m).is_probe for m, _, _ in pending):
        _prepare_embeddings(config, manifest, root, extractor)

    plans = {}
    for seed in sorted({s for _, _, s in pending}):
        for plan in make_loto_splits(manifest, seed, config.protocol.bonafide_test_fraction):
            plans[(plan.held_out_attack.value, seed)] = plan

    bar = tqdm(total=len(pending), desc='protocol', unit='run', disable=not progress or not pending)

    def record_failure(cell, err):
        message = f"{type(err).__name__}: {err}"
        outcome.failed[cell] = message
        runs.save_failure(*cell, message)
        logger.error("run failed", extra=dict(method=cell[0], held_out_attack=cell[1], seed=cell[2], error=message))
        logger.debug(traceback.format_exc())

    try:
        if jobs <= 1:
            ctx = CellContext(config, manifest, root, extractor_id, stores)
            for cell in pending:
                try:
                    run_cell(*cell, ctx, plans[(cell[1], cell[2])])
                    outcome.executed.append(cell)
                except KeyboardInterrupt:
                    raise
                except Exception as err:
                    record_failure(cell, err)
                bar.update()
        else:
            _run_parallel(pending, jobs, config, manifest, root, extractor_id, outcome, bar, record_failure)
    except KeyboardInterrupt:
        outcome.interrupted = True
        logger.warning("protocol interrupted, store left resumable",
                       extra=dict(n_executed=len(outcome.executed)))
    finally:
        bar.close()

    for cell in cells:
        if runs.is_complete(*cell, run_fps[cell[0]]):
            outcome.results.append(runs.load(*cell))
    return outcome


def _run_parallel(pending, jobs, config, manifest, root, extractor_id, outcome, bar, record_failure):
    context = multiprocessing.get_context('spawn')
    with ProcessPoolExecutor(max_workers=jobs, mp_context=context, initializer=_worker_init,
                             initargs=(config, manifest, root, extractor_id)) as pool:
        futures = {pool.submit(_worker_run, *cell): cell for cell in pending}
        try:
            not_done = set(futures)
            while not_done:
                done, not_done = wait(not_done, return_when=FIRST_COMPLETED)
                for future in done:
                    cell = futures[future]
                    try:
                        future.result()
                        outcome.executed.append(cell)
                    except Exception as err:
                        record_failure(cell, err)
                    bar.update()
        except KeyboardInterrupt:
            for future in futures:
                future.cancel()
            wait([f for f in futures if not f.cancelled()])
            for future, cell in futures.items():
                if future.done() and not future.cancelled() and future.exception() is None \
                        and cell not in outcome.executed:
                    outcome.executed.append(cell)
            raise

