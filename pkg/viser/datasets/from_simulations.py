"""Synthetic corpora, so the pipeline can be exercised without the restricted iris data.

Every generator is seeded and writes plain files in the formats the loaders read:
PNG images and masks, a line-delimited manifest, fixation records and a remap sidecar.
"""
from pathlib import Path
from typing import List, Tuple

import numpy as np

from viser import utils
from viser.datasets._dataset_loader import save_image, save_mask
from viser.datasets.manifest import AttackType, DatasetManifest, IrisSample, Label, write_manifest
from viser.saliency.gaze import (FixationRecord, GazeSession, Phase, RemapCoefficients, write_gaze_sessions,
                                 write_remap_coefficients)
from viser.saliency.maps import AnnotationSet


def disk(size, center, radius):
    """Boolean disk on a (height, width) grid; `center` and `radius` in pixels."""
    rows, cols = np.mgrid[:size[0], :size[1]]
    return (rows - center[0])**2 + (cols - center[1])**2 <= radius**2


def _iris_image(rng, size):
    height, width = size
    center = (height / 2 - 0.5, width / 2 - 0.5)
    image = 0.3 + 0.35 * disk(size, center, 0.35 * min(size))
    return image + rng.normal(0., 0.03, size)


def _attack_pattern(attack_type, size):
    """Texture added to an iris image for each attack type: stripes whose period and
    orientation depend on the type.
    """
    k = AttackType.attacks().index(attack_type)
    period = 1 + k % 3
    rows, cols = np.mgrid[:size[0], :size[1]]
    axis = rows if k % 2 == 0 else cols
    return 0.2 * ((axis // period) % 2)


class _SimCorpus:
    """Base of the synthetic corpora. Subclasses implement `simulate` and `write`."""
    def __init__(self, image_size=(16, 16), seed=0):
        self.image_size = tuple(image_size)
        self.seed = seed

    def simulate(self):
        raise NotImplementedError

    def write(self, root):
        raise NotImplementedError


class ProtocolCorpus(_SimCorpus):
    """Bonafide iris-like images from two source corpora and a few samples of each of the
    seven attack types, with segmentation masks, multi-annotator masks and gaze sessions
    for every sample.

    Keyword Arguments:
        n_bonafide {int} -- Bonafide samples. (default: {12})
        n_per_attack {int} -- Samples per attack type. (default: {4})
        n_annotators {int} -- Annotators per sample. (default: {3})
        n_participants {int} -- Gaze participants per sample. (default: {3})
        image_size {tuple} -- (height, width). (default: {(16, 16)})
        seed {int} -- (default: {0})
    """
    corpora = ('lab_a', 'lab_b')

    def __init__(self, n_bonafide=12, n_per_attack=4, n_annotators=3, n_participants=3, image_size=(16, 16),
                 seed=0):
        super().__init__(image_size, seed)
        self.n_bonafide = n_bonafide
        self.n_per_attack = n_per_attack
        self.n_annotators = n_annotators
        self.n_participants = n_participants

    def simulate(self):
        """Returns a dict with `records` (sample_id, attack_type, source_corpus, image),
        `masks`, `annotations` and `sessions`, keyed by sample id where applicable.
        """
        rng = np.random.default_rng(self.seed)
        records = []
        for i in range(self.n_bonafide):
            records.append((f"bf-{i:04d}", AttackType.bonafide, self.corpora[i % 2], _iris_image(rng, self.image_size)))
        for attack in AttackType.attacks():
            for i in range(self.n_per_attack):
                image = _iris_image(rng, self.image_size) + _attack_pattern(attack, self.image_size)
                records.append((f"{attack.value}-{i:04d}", attack, self.corpora[i % 2], image))
        height, width = self.image_size
        center = (height / 2 - 0.5, width / 2 - 0.5)
        radius = 0.35 * min(self.image_size)
        masks, annotations, sessions = {}, {}, []
        for sid, _, _, _ in records:
            masks[sid] = disk(self.image_size, center, radius).astype(np.uint8)
            annotations[sid] = AnnotationSet(sid, tuple(
                disk(self.image_size, center + rng.normal(0., 1., 2), radius * rng.uniform(0.6, 1.1)).astype(np.uint8)
                for _ in range(self.n_annotators)))
            for p in range(self.n_participants):
                sessions.append(simulate_session(rng, sid, f"p{p:02d}"))
        return dict(records=records, masks=masks, annotations=annotations, sessions=sessions)

    def write(self, root):
        """Write the corpus under `root`.

        Returns:
            dict -- Paths `manifest`, `masks_dir`, `annotations_dir`, `gaze` and `remap`.
        """
        root = Path(root)
        data = self.simulate()
        samples = []
        for sid, attack, corpus, image in data['records']:
            path = save_image(root / 'images' / f"{sid}.png", image)
            label = Label.bonafide if attack is AttackType.bonafide else Label.attack
            samples.append(IrisSample(sid, path, label, attack, corpus))
        for sid, mask in data['masks'].items():
            save_mask(root / 'masks' / f"{sid}.png", mask)
        for sid, ann in data['annotations'].items():
            for j, mask in enumerate(ann.masks):
                save_mask(root / 'annotations' / sid / f"annotator{j}.png", mask)
        paths = dict(manifest=root / 'manifest.jsonl', masks_dir=root / 'masks', annotations_dir=root / 'annotations',
                     gaze=root / 'gaze.jsonl', remap=root / 'remap.jsonl')
        write_manifest(DatasetManifest(tuple(samples), self.image_size), paths['manifest'])
        write_gaze_sessions(paths['gaze'], data['sessions'])
        participants = sorted({s.participant_id for s in data['sessions']})
        write_remap_coefficients(paths['remap'], {p: RemapCoefficients.identity() for p in participants})
        return paths


def simulate_session(rng, sample_id, participant_id, n_initial=3, n_full=6, n_noise=1, center=(0.5, 0.5)):
    """Gaze session with `n_initial` first-impression fixations close to `center`, `n_full`
    wider fixations around it and `n_noise` uniformly scattered fixations.
    """
    points = [(rng.normal(center[0], 0.04), rng.normal(center[1], 0.04), Phase.initial) for _ in range(n_initial)]
    points += [(rng.normal(center[0], 0.08), rng.normal(center[1], 0.08), Phase.full) for _ in range(n_full)]
    points += [(rng.uniform(), rng.uniform(), Phase.full) for _ in range(n_noise)]
    fixations = tuple(FixationRecord(float(np.clip(x, 0., 1.)), float(np.clip(y, 0., 1.)),
                                     float(rng.uniform(150., 400.)), participant_id, phase, t_ms=250. * i)
                      for i, (x, y, phase) in enumerate(points))
    return GazeSession(sample_id, participant_id, fixations)


class SteeringCorpus(_SimCorpus):
    """Two-class corpus where two disjoint regions each predict the class perfectly.

    Region A (left half) carries a checkerboard on attacks and is flat on bonafide
    samples; region B (right half) is brighter by 0.5 on attacks. A model trained with
    cross-entropy alone may use either region, saliency targets on region A pull the
    evidence to the left half.

    Keyword Arguments:
        n_per_class {int} -- Samples per class. (default: {24})
        image_size {tuple} -- (height, width). (default: {(16, 16)})
        seed {int} -- (default: {0})
    """
    def __init__(self, n_per_class=24, image_size=(16, 16), seed=0):
        super().__init__(image_size, seed)
        self.n_per_class = n_per_class

    @property
    def region_a(self):
        region = np.zeros(self.image_size, dtype=bool)
        region[:, :self.image_size[1] // 2] = True
        return region

    @property
    def region_b(self):
        return ~self.region_a

    def simulate(self):
        """Returns `(images, labels)` with images of shape (n, H, W) in [0, 1]."""
        rng = np.random.default_rng(self.seed)
        rows, cols = np.mgrid[:self.image_size[0], :self.image_size[1]]
        checker = ((rows + cols) % 2).astype(np.float64)
        images, labels = [], []
        for label in (0, 1):
            for _ in range(self.n_per_class):
                image = 0.25 + rng.normal(0., 0.02, self.image_size)
                if label:
                    image = image + 0.4 * checker * self.region_a + 0.5 * self.region_b
                images.append(np.clip(image, 0., 1.))
                labels.append(label)
        return np.stack(images), np.array(labels)

    def write(self, root):
        """Write images, a manifest (attacks tagged `printout`) and region A masks.

        Returns:
            dict -- Paths `manifest` and `masks_dir`.
        """
        root = Path(root)
        images, labels = self.simulate()
        samples = []
        for i, (image, label) in enumerate(zip(images, labels)):
            sid = f"{'atk' if label else 'bf'}-{i:04d}"
            path = save_image(root / 'images' / f"{sid}.png", image)
            attack = AttackType.printout if label else AttackType.bonafide
            samples.append(IrisSample(sid, path, Label.attack if label else Label.bonafide, attack, 'steer'))
            save_mask(root / 'masks' / f"{sid}.png", self.region_a)
        manifest = root / 'manifest.jsonl'
        write_manifest(DatasetManifest(tuple(samples), self.image_size), manifest)
        return dict(manifest=manifest, masks_dir=root / 'masks')


def annotation_corpus(n_sets=20, n_annotators=3, size=(32, 32), seed=0) -> List[AnnotationSet]:
    """Multi-annotator sets of disks around a per-set centre, with jittered centres and radii."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sets):
        center = rng.uniform(0.35, 0.65, 2) * np.array(size)
        radius = rng.uniform(0.15, 0.25) * min(size)
        masks = tuple(disk(size, center + rng.normal(0., 1.5, 2), radius * rng.uniform(0.8, 1.2)).astype(np.uint8)
                      for _ in range(n_annotators))
        out.append(AnnotationSet(f"ann-{i:04d}", masks))
    return out


def fixation_cloud(seed, n_blobs=None, blob_size=(8, 30), noise=10, scale=0.03) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs plus uniform noise in the unit square.

    Keyword Arguments:
        n_blobs {int} -- Number of blobs. If 'None' drawn from 1-3. (default: {None})
        blob_size {tuple} -- Range of points per blob. (default: {(8, 30)})
        noise {int} -- Uniform noise points. (default: {10})
        scale {float} -- Blob standard deviation. (default: {0.03})

    Returns:
        tuple -- `(points, truth)` with points of shape (n, 2) and truth the blob index
            of each point, -1 for noise.
    """
    rng = np.random.default_rng(seed)
    n_blobs = int(rng.integers(1, 4)) if n_blobs is None else n_blobs
    points, truth = [], []
    for b in range(n_blobs):
        center = rng.uniform(0.2, 0.8, 2)
        n = int(rng.integers(*blob_size))
        points.append(rng.normal(center, scale, (n, 2)))
        truth.append(np.full(n, b))
    points.append(rng.uniform(0., 1., (noise, 2)))
    truth.append(np.full(noise, -1))
    return np.clip(np.concatenate(points), 0., 1.), np.concatenate(truth)


def write_fixture_experiment(root, methods=('xent',), seeds=(0, 1), epochs=2, corpus=None, **training) -> Path:
    """Write a protocol corpus and a matching experiment config under `root`, set up for
    the tiny backbone.

    Keyword Arguments:
        methods {tuple} -- Protocol methods. (default: {('xent',)})
        seeds {tuple} -- Protocol seeds. (default: {(0, 1)})
        epochs {int} -- Training epochs. (default: {2})
        corpus {ProtocolCorpus} -- Corpus to write. If 'None' a default one. (default: {None})
        **training -- Further `training.*` settings.

    Returns:
        Path -- Path of `config.json`.
    """
    root = Path(root)
    corpus = ProtocolCorpus() if corpus is None else corpus
    paths = corpus.write(root / 'data')
    rel = {key: Path(value).relative_to(root).as_posix() for key, value in paths.items()}
    config = dict(
        manifest=rel['manifest'],
        image_size=list(corpus.image_size),
        output_root='out',
        saliency=dict(inputs=dict(masks_dir=rel['masks_dir'], annotations_dir=rel['annotations_dir'],
                                  gaze=rel['gaze'], remap=rel['remap'])),
        training=dict(dict(backbone='tiny:2', epochs=epochs, batch_size=8, lr=0.05, val_fraction=0.), **training),
        protocol=dict(methods=list(methods), seeds=list(seeds), jobs=1),
        extractor=dict(kind='intensity', batch_size=8, parallelism=2),
    )
    path = root / 'config.json'
    utils.atomic_write_json(path, config)
    return path
