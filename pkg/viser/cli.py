"""Command line entry point, `viser <command>`.

Machine-readable summaries go to stdout as JSON; logs go to stderr as JSON lines.
Exit codes: 0 success, 1 configuration or data error, 2 usage error, 3 protocol finished
with failed cells or was interrupted.
"""
import argparse
import logging
import sys
from pathlib import Path

from viser import utils
from viser.config import load_config
from viser.datasets.manifest import AttackType, load_manifest
from viser.exceptions import ConfigError, ViserError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3


def parse_seeds(text):
    """Seeds from '0..11' (inclusive range) or '0,3,5'."""
    text = text.strip()
    if '..' in text:
        start, _, stop = text.partition('..')
        try:
            start, stop = int(start), int(stop)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid seed range {text!r}") from None
        if stop < start:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(start, stop + 1))
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def parse_attacks(text):
    try:
        return [AttackType.parse(v.strip()) for v in text.split(',') if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def parse_list(text):
    return [v.strip() for v in text.split(',') if v.strip()]


def get_args_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-c', '--config', default='viser.json', type=Path,
                        help="experiment config file (default: viser.json)")
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help="override a config value, e.g. --set training.epochs=5 (repeatable)")
    common.add_argument('--output-root', default=None, type=Path,
                        help="output directory, overrides the config and VISER_OUTPUT_ROOT")
    common.add_argument('--log-level', default='info', choices=['debug', 'info', 'warning', 'error'],
                        help="log level of the JSON-lines log on stderr (default: info)")

    parser = argparse.ArgumentParser(prog='viser', description="Saliency-guided iris presentation attack detection")
    sub = parser.add_subparsers(dest='command', required=True, metavar='command')

    sub.add_parser('validate-config', parents=[common], help="check the config and the manifest")

    p = sub.add_parser('compile-saliency', parents=[common], help="compile one saliency source")
    p.add_argument('source', help="saliency source, e.g. segmentation, hand_high, et_initial_denoised")
    p.add_argument('--png', action='store_true', help="also write 16-bit PNG previews of the maps")
    p.add_argument('--dump-labelings', default=None, type=Path, metavar='PATH',
                   help="write fixation cluster labelings as JSON lines (denoised gaze sources)")
    p.add_argument('--force', action='store_true', help="recompile even if an up-to-date store exists")

    p = sub.add_parser('train', parents=[common], help="train the network of one protocol cell")
    p.add_argument('--method', required=True, help="CNN method, e.g. xent or hand_high")
    p.add_argument('--attack', required=True, type=AttackType.parse, help="held-out attack type")
    p.add_argument('--seed', default=0, type=int, help="seed (default: 0)")

    sub.add_parser('embed', parents=[common], help="extract and cache embeddings of every sample")

    p = sub.add_parser('eval', parents=[common], help="run the leave-one-attack-type-out protocol (resumable)")
    p.add_argument('--method', default=None, type=parse_list, help="comma separated methods (default: config)")
    p.add_argument('--attacks', default=None, type=parse_attacks, help="comma separated held-out attack types")
    p.add_argument('--seeds', default=None, type=parse_seeds, help="'0..11' or '0,1,2' (default: config)")
    p.add_argument('--jobs', default=None, type=int, help="worker processes (default: config)")
    p.add_argument('--no-progress', action='store_true', help="hide the progress bar")

    p = sub.add_parser('report', parents=[common], help="aggregate results into delta tables")
    p.add_argument('--baseline', default=None, help="baseline method (default: config)")
    p.add_argument('--method', default=None, type=parse_list, help="comma separated methods (default: all found)")
    p.add_argument('--format', default='markdown', choices=['markdown', 'csv'])
    p.add_argument('--output', default=None, type=Path, help="write the report here instead of stdout")
    p.add_argument('--force', action='store_true', help="report results with mismatched fingerprints")
    return parser


def _emit(obj):
    sys.stdout.write(utils.canonical_json(obj) + '\n')
    sys.stdout.flush()


def _setup(args, check_paths=True, manifest=True):
    config = load_config(args.config, args.overrides)
    if args.output_root is not None:
        config.output_root = args.output_root
    config.check(check_paths)
    root = Path(args.output_root) if args.output_root is not None else config.resolved_output_root
    if not manifest:
        return config, None, root
    return config, load_manifest(config.manifest, config.image_size), root


def cmd_validate_config(args):
    config, manifest, root = _setup(args)
    _emit(dict(status='ok', config_fingerprint=config.fingerprint(), output_root=root,
               n_samples=len(manifest), histogram={t.value: n for t, n in manifest.histogram().items()}))
    return EXIT_OK


def cmd_compile_saliency(args):
    from viser.saliency.compile import (compile_saliency, load_raw_inputs, load_store, saliency_fingerprint,
                                        save_store)
    from viser.saliency.maps import SaliencySource
    config, manifest, root = _setup(args)
    try:
        source = SaliencySource(args.source)
    except ValueError:
        raise ConfigError([f"source: unknown saliency source {args.source!r}. "
                           f"Known: {', '.join(s.value for s in SaliencySource)}"]) from None
    expected = saliency_fingerprint(source, config.saliency, config.image_size)
    if not args.force and args.dump_labelings is None:
        try:
            existing = load_store(root, source)
        except FileNotFoundError:
            existing = None
        if existing is not None and existing.fingerprint == expected:
            logger.info("saliency store up to date", extra=dict(source=source.value))
            _emit(dict(status='cached', source=source.value, fingerprint=expected, n_maps=len(existing),
                       n_gaps=len(existing.gaps)))
            return EXIT_OK
    try:
        inputs = load_raw_inputs(source, config.saliency, manifest.sample_ids, config.image_size)
    except ValueError as err:
        raise ConfigError([str(err)]) from None
    store = compile_saliency(source, inputs, manifest.sample_ids, config.image_size, config.saliency)
    directory = save_store(store, root, png=args.png)
    if args.dump_labelings is not None:
        utils.write_jsonl(args.dump_labelings, store.labelings)
    _emit(dict(status='compiled', source=source.value, fingerprint=store.fingerprint, directory=directory,
               n_maps=len(store), n_empty=sum(m.empty for m in store.maps.values()), n_gaps=len(store.gaps)))
    return EXIT_OK


def cmd_train(args):
    from viser.evaluation.protocol import CellContext, train_cell
    config, manifest, root = _setup(args)
    ctx = CellContext(config, manifest, root)
    _, path, reused = train_cell(args.method, args.attack, args.seed, ctx)
    _emit(dict(status='cached' if reused else 'trained', method=args.method, held_out_attack=args.attack.value,
               seed=args.seed, checkpoint=path))
    return EXIT_OK


def cmd_embed(args):
    from viser.embeddings.extractors import make_extractor
    from viser.embeddings.store import extract_embeddings
    config, manifest, root = _setup(args)
    extractor = make_extractor(config.extractor)
    embeddings = extract_embeddings(extractor, list(manifest), root, config.image_size,
                                    config.extractor.batch_size, config.extractor.parallelism)
    _emit(dict(status='ok', extractor_id=extractor.extractor_id, n_vectors=len(embeddings), dim=embeddings.dim,
               n_gaps=len(embeddings.gaps), n_images_embedded=extractor.n_images))
    return EXIT_OK


def cmd_eval(args):
    from viser.evaluation.protocol import run_protocol
    config, manifest, root = _setup(args)
    outcome = run_protocol(config, manifest, args.method, args.attacks, args.seeds, root, args.jobs,
                           progress=not args.no_progress)
    _emit(dict(status='complete' if outcome.complete else ('interrupted' if outcome.interrupted else 'partial'),
               n_results=len(outcome.results), n_executed=len(outcome.executed), n_cached=len(outcome.cached),
               failed=[dict(method=m, held_out_attack=a, seed=s, error=e)
                       for (m, a, s), e in sorted(outcome.failed.items())]))
    return EXIT_OK if outcome.complete else EXIT_PARTIAL


def cmd_report(args):
    from viser.evaluation.protocol import RunStore
    from viser.reporting.report import build_report, diagnostics, render_report
    config, _, root = _setup(args, check_paths=False, manifest=False)
    baseline = args.baseline or config.protocol.baseline
    methods = args.method
    wanted = None if methods is None else set(methods) | {baseline}
    results = RunStore(root).load_all(wanted)
    report = build_report(results, baseline, methods, expected_runs=len(config.protocol.seeds), force=args.force)
    text = render_report(report, args.format)
    utils.atomic_write_json(root / 'reports' / 'diagnostics.json', diagnostics(report))
    if args.output is not None:
        utils.atomic_write_text(args.output, text)
        _emit(dict(status='ok', output=args.output, n_results=len(results)))
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    'validate-config': cmd_validate_config,
    'compile-saliency': cmd_compile_saliency,
    'train': cmd_train,
    'embed': cmd_embed,
    'eval': cmd_eval,
    'report': cmd_report,
}


def main(argv=None):
    parser = get_args_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code else EXIT_OK
    utils.configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        logger.error("invalid configuration", extra=dict(error=type(err).__name__, messages=err.messages))
    except (ViserError, FileNotFoundError) as err:
        logger.error("command failed", extra=dict(error=type(err).__name__, messages=[str(err)]))
    return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
