import random

import pytest
import numpy as np

from viser.datasets.manifest import AttackType
from viser.evaluation.protocol import RunResult
from viser.exceptions import ProtocolError
from viser.reporting import report as rep

ATTACKS = AttackType.attacks()

XENT = dict(auroc=[0.9169, 0.6537, 0.8012, 0.6541, 0.9717, 0.7450, 0.6550],
            apcer=[0.5540, 0.9377, 0.8321, 0.9831, 0.2337, 0.9167, 0.9868])

# Published deltas against the cross-entropy baseline, per attack type in reporting order.
DELTAS = {
    'segmentation': ([+0.0087, -0.0052, +0.0385, -0.0511, -0.0212, +0.0345, +0.0232],
                     [-0.0522, +0.0211, +0.0615, +0.0094, +0.0920, -0.0587, +0.0088]),
    'hand_high': ([-0.0184, +0.0520, +0.0073, -0.0712, -0.0123, -0.0050, +0.0175],
                  [+0.0257, +0.0088, +0.0166, +0.0169, +0.0623, -0.0294, +0.0000]),
    'hand_equal': ([-0.0010, +0.0847, -0.0098, -0.0122, -0.0021, +0.0274, +0.0277],
                   [+0.0879, -0.0535, +0.0423, +0.0094, +0.0173, -0.0341, +0.0088]),
    'hand_low': ([-0.0001, -0.0077, +0.0294, -0.0160, -0.0384, +0.0140, -0.0157],
                 [-0.0403, +0.0079, +0.0282, +0.0094, +0.1676, -0.0082, +0.0103]),
    'et_full': ([+0.0473, +0.0282, -0.0468, +0.0941, -0.0155, +0.0474, +0.2387],
                [-0.2765, -0.0210, +0.0153, -0.0664, +0.0824, -0.1198, -0.2353]),
    'et_initial': ([+0.0513, +0.0192, -0.0155, +0.0236, -0.0481, +0.0650, +0.2672],
                   [-0.2701, -0.0473, +0.0743, -0.0430, +0.1753, -0.0834, -0.3815]),
    'et_full_denoised': ([+0.0604, +0.0345, -0.0820, +0.0621, -0.0782, +0.0597, +0.2438],
                         [-0.2893, -0.0412, +0.0717, -0.0927, +0.2194, -0.1127, -0.3552]),
    'et_initial_denoised': ([+0.0627, +0.0574, -0.0645, +0.1090, -0.0453, +0.0372, +0.2692],
                            [-0.3617, -0.0412, +0.0551, -0.1413, +0.1600, -0.0599, -0.3552]),
    'embed_logreg': ([-0.0326, -0.1079, +0.0378, -0.0340, +0.0086, -0.0327, +0.1520],
                     [+0.1026, +0.0255, -0.1449, -0.0187, +0.0297, -0.0200, -0.0350]),
    'embed_svm_linear': ([-0.0523, -0.1247, -0.0033, -0.0613, +0.0017, -0.0351, +0.1737],
                         [+0.1914, +0.0219, -0.0924, -0.0037, +0.1408, +0.0035, -0.0935]),
    'embed_svm_rbf': ([-0.0104, +0.0023, +0.1796, +0.1121, -0.0159, -0.0448, +0.1167],
                      [+0.2885, +0.0588, -0.5180, +0.0047, +0.2835, -0.0118, +0.0132]),
}


def published_report():
    means = dict(xent=XENT)
    for method, (auroc, apcer) in DELTAS.items():
        means[method] = dict(auroc=[b + d for b, d in zip(XENT['auroc'], auroc)],
                             apcer=[b + d for b, d in zip(XENT['apcer'], apcer)])
    return rep.report_from_means(means, 'xent', n_runs=12)


def run(method, attack, seed, auroc, apcer, run_fp='r', protocol_fp='p'):
    return RunResult(method, AttackType.parse(attack), seed, [], auroc, apcer, run_fingerprint=run_fp,
                     protocol_fingerprint=protocol_fp)


def runs_for(method, values, seeds=(0, 1), **kwargs):
    """Runs with the given per-attack AUROC and APCER = 1 - AUROC, jittered symmetrically over seeds."""
    out = []
    for attack, value in zip(ATTACKS, values):
        for i, seed in enumerate(seeds):
            jitter = 0.01 * (i - (len(seeds) - 1) / 2)
            out.append(run(method, attack, seed, value + jitter, 1. - value - jitter, **kwargs))
    return out


def test_baseline_averages():
    report = published_report()
    assert report.baseline.avg_auroc == pytest.approx(0.7711, abs=1e-4)
    assert report.baseline.avg_apcer == pytest.approx(0.7777, abs=1e-4)


def test_denoised_initial_deltas():
    row = published_report().row('et_initial_denoised')
    assert row.avg_auroc == pytest.approx(0.0608, abs=5e-4)
    assert row.avg_apcer == pytest.approx(-0.1063, abs=5e-4)
    assert row.delta('auroc', AttackType.artificial) == pytest.approx(0.2692, abs=1e-9)


@pytest.mark.parametrize('metric, expected', [
    ('auroc', {AttackType.printout: 'et_initial_denoised', AttackType.diseased: 'hand_equal',
               AttackType.post_mortem: 'embed_svm_rbf', AttackType.synthetic: 'embed_svm_rbf',
               AttackType.contacts_plus_print: 'embed_logreg', AttackType.textured_contact: 'et_initial',
               AttackType.artificial: 'et_initial_denoised', None: 'et_initial_denoised'}),
    ('apcer', {AttackType.printout: 'et_initial_denoised', AttackType.diseased: 'hand_equal',
               AttackType.post_mortem: 'embed_svm_rbf', AttackType.synthetic: 'et_initial_denoised',
               AttackType.contacts_plus_print: 'hand_equal', AttackType.textured_contact: 'et_full',
               AttackType.artificial: 'et_initial', None: 'et_initial_denoised'}),
])
def test_published_best_cells(metric, expected):
    best = rep.best_cells(published_report(), metric)
    assert {column: winners for column, (winners, _) in best.items()} == {c: [m] for c, m in expected.items()}


def test_markdown_rendering():
    text = rep.render_report(published_report(), 'markdown')
    assert '### AUROC (delta vs xent)' in text
    assert '### APCER @ BPCER=1% (delta vs xent)' in text
    lines = text.splitlines()
    xent = next(line for line in lines if line.startswith('| xent |'))
    assert '0.9169' in xent and '+' not in xent and '**' not in xent
    dn = next(line for line in lines if line.startswith('| et_initial_denoised |'))
    assert '**+0.0627**' in dn and '**+0.0608**' in dn
    assert 'Averages are unweighted over the 7 attack types.' in text
    assert '†' not in text


def test_baseline_against_itself_is_zero():
    results = runs_for('xent', XENT['auroc']) + runs_for('copy', XENT['auroc'])
    report = rep.build_report([r for r in results], 'xent', ['copy'])
    row = report.row('copy')
    assert all(row.delta('auroc', a) == pytest.approx(0., abs=1e-12) for a in ATTACKS)
    frame = rep.report_frame(report)
    assert (frame['delta'] == 0.).all()
    assert '-0.0000' not in rep.render_report(report, 'csv')


def test_single_method_bold_everywhere():
    results = runs_for('xent', XENT['auroc']) + runs_for('hand_low', np.array(XENT['auroc']) - 0.05)
    report = rep.build_report(results, 'xent')
    text = rep.render_report(report, 'markdown')
    row = next(line for line in text.splitlines() if line.startswith('| hand_low |'))
    assert row.count('**') == 2 * 8
    assert '**-0.0500**' in row


def test_ties_are_marked():
    results = runs_for('xent', XENT['auroc']) + runs_for('a', XENT['auroc']) + runs_for('b', XENT['auroc'])
    report = rep.build_report(results, 'xent')
    best = rep.best_cells(report, 'auroc')
    assert all(winners == ['a', 'b'] and tied for winners, tied in best.values())
    text = rep.render_report(report, 'markdown')
    assert '**+0.0000**†' in text
    assert 'tied for best' in text


def test_csv_layout():
    results = runs_for('xent', XENT['auroc']) + runs_for('et_full', np.array(XENT['auroc']) + 0.02)
    text = rep.render_report(rep.build_report(results, 'xent'), 'csv')
    lines = text.splitlines()
    assert lines[0] == ','.join(rep.CSV_COLUMNS)
    assert len(lines) == 1 + 2 * 2 * 8
    assert lines[1].startswith('xent,printout,auroc,0.9169,0.0000,2')
    assert 'et_full,average,auroc,0.7911,0.0200,14' in lines
    assert not text.endswith('\n\n')


def test_aggregation_is_permutation_invariant():
    rng = np.random.default_rng(0)
    results = [run('xent', a, s, rng.uniform(), rng.uniform()) for a in ATTACKS for s in range(12)]
    first = rep.aggregate_runs(results)
    for seed in range(5):
        shuffled = list(results)
        random.Random(seed).shuffle(shuffled)
        again = rep.aggregate_runs(shuffled)
        assert again.per_attack == first.per_attack
        assert (again.avg_auroc, again.avg_apcer) == (first.avg_auroc, first.avg_apcer)


def test_average_is_unweighted_over_attacks():
    results = [run('xent', 'printout', s, 1., 0.) for s in range(10)]
    results += [run('xent', a, 0, 0.5, 0.5) for a in ATTACKS[1:]]
    report = rep.aggregate_runs(results)
    assert report.avg_auroc == pytest.approx((1. + 6 * 0.5) / 7)
    assert report.per_attack[AttackType.printout].n_runs == 10


def test_partial_cells():
    results = runs_for('xent', XENT['auroc'], seeds=(0, 1, 2))[:-1]
    report = rep.aggregate_runs(results, expected_runs=3)
    assert report.partial == [AttackType.artificial]
    missing = rep.aggregate_runs([r for r in results if r.held_out_attack is not AttackType.artificial],
                                 expected_runs=3)
    assert missing.partial == [AttackType.artificial]
    assert AttackType.artificial not in missing.per_attack
    delta = rep.build_report(results, 'xent', expected_runs=3)
    text = rep.render_report(delta, 'markdown')
    assert 'incomplete cell' in text


def test_aggregate_errors():
    with pytest.raises(ValueError):
        rep.aggregate_runs([])
    with pytest.raises(ValueError):
        rep.aggregate_runs([run('a', 'printout', 0, .5, .5), run('b', 'printout', 0, .5, .5)])
    base = rep.aggregate_runs(runs_for('xent', XENT['auroc']))
    short = rep.aggregate_runs([r for r in runs_for('x', XENT['auroc']) if r.held_out_attack is not ATTACKS[0]])
    with pytest.raises(ValueError):
        rep.delta_table(base, [short])


def test_fingerprint_checks():
    good = runs_for('xent', XENT['auroc'])
    mixed_protocol = good + runs_for('et_full', XENT['auroc'], protocol_fp='q')
    with pytest.raises(ProtocolError, match='protocol'):
        rep.build_report(mixed_protocol, 'xent')
    assert rep.check_fingerprints(mixed_protocol, force=True)
    mixed_run = good[:-1] + [run('xent', 'artificial', 1, .5, .5, run_fp='other')]
    with pytest.raises(ProtocolError, match="'xent'"):
        rep.build_report(mixed_run, 'xent')
    assert rep.build_report(mixed_run, 'xent', force=True).baseline.method == 'xent'


def test_missing_methods():
    results = runs_for('xent', XENT['auroc'])
    with pytest.raises(ProtocolError):
        rep.build_report(results, 'segmentation')
    with pytest.raises(ProtocolError):
        rep.build_report(results, 'xent', ['et_full'])
    with pytest.raises(ValueError):
        rep.render_report(rep.build_report(results, 'xent'), 'html')


def test_diagnostics():
    results = runs_for('xent', XENT['auroc']) + runs_for('et_full', XENT['auroc'])
    diag = rep.diagnostics(rep.build_report(results, 'xent'))
    assert set(diag) == {'xent', 'et_full'}
    cell = diag['xent']['cells']['printout']
    assert cell['n_runs'] == 2
    assert cell['std_auroc'] == pytest.approx(0.005)
