"""Compile raw saliency inputs (masks, annotations, fixations) into per-sample maps.

A compiled store lives under `<root>/saliency/<source>/` as one `<sample_id>.npy` float
grid per sample plus an `index.json` listing gaps, empty maps and the producing fingerprint.
"""
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np

from viser import utils
from viser.clustering.hdbscan import denoise_fixations
from viser.config import SaliencyConfig
from viser.datasets._dataset_loader import load_mask, save_saliency_png
from viser.saliency import gaze
from viser.saliency.maps import (AnnotationSet, SaliencyMap, SaliencySource, aggregate_maps,
                                 average_annotations, blur_map, normalize_map)

logger = logging.getLogger(__name__)


@dataclass
class SaliencyStore:
    """Compiled maps of one source keyed by sample id.

    Samples without raw input are listed in `gaps`. Maps flagged `empty` (e.g. a session
    without initial-phase fixations) are stored but carry no training target.
    """
    source: SaliencySource
    maps: Dict[str, SaliencyMap] = field(default_factory=dict)
    gaps: List[str] = field(default_factory=list)
    fingerprint: str = ''
    labelings: List[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.maps)

    def __contains__(self, sample_id):
        return sample_id in self.maps

    def get(self, sample_id) -> Optional[SaliencyMap]:
        return self.maps.get(sample_id, None)

    def target_arrays(self, sample_ids, image_size):
        """Targets for training.

        Returns:
            tuple -- `(targets, has_target)` with `targets` float32 of shape (n, H, W) and
                `has_target` bool of shape (n,), false for gaps and empty maps.
        """
        targets = np.zeros((len(sample_ids), *image_size), dtype=np.float32)
        has_target = np.zeros(len(sample_ids), dtype=bool)
        for i, sid in enumerate(sample_ids):
            smap = self.maps.get(sid, None)
            if smap is None or smap.empty:
                continue
            if smap.shape != tuple(image_size):
                raise ValueError(f"Saliency map for {sid!r} has shape {smap.shape}, "
                                 f"expected image size {tuple(image_size)}")
            targets[i] = smap.values
            has_target[i] = True
        return targets, has_target


def _compile_mask(sample_id, mask, source):
    return normalize_map(SaliencyMap(np.asarray(mask, dtype=np.float64), sample_id, source))


def _compile_annotations(ann, source, kernel):
    smap = blur_map(average_annotations(ann), kernel)
    return normalize_map(SaliencyMap(smap.values, ann.sample_id, source))


def _compile_gaze(sample_id, sessions, source, settings, image_size, labelings):
    sigma_px = settings.sigma_fraction * image_size[1]
    participant_maps = []
    for session in sessions:
        session = gaze.remap_fixations(session)
        fixations = session.of_phase(gaze.Phase.initial) if source.initial_only else list(session.fixations)
        if source.denoised:
            kept, labeling = denoise_fixations(fixations, settings.min_cluster_size, settings.min_samples,
                                               settings.allow_single_cluster)
            labelings.extend(dict(sample_id=sample_id, participant_id=session.participant_id, phase=f.phase.value,
                                  t_ms=f.t_ms, x=f.x, y=f.y, duration_ms=f.duration, label=int(label))
                             for f, label in zip(fixations, labeling.labels))
            fixations = kept
        smap = gaze.render_gaze_heatmap(fixations, sigma_px, image_size, sample_id, source)
        if not smap.empty:
            participant_maps.append(smap)
    if not participant_maps:
        return SaliencyMap(np.zeros(image_size), sample_id, source, empty=True)
    return aggregate_maps(participant_maps)


def compile_saliency(source, inputs: Mapping, sample_ids, image_size, settings=None) -> SaliencyStore:
    """Compile one saliency source into a store.

    Arguments:
        source {SaliencySource, str} -- Source to compile.
        inputs {dict} -- Raw inputs by sample id: a binary mask for `segmentation`, an
            `AnnotationSet` for the hand sources, a list of `GazeSession` for the gaze sources.
        sample_ids {list} -- Samples to compile. Ids missing from `inputs` become gaps.
        image_size {tuple} -- (height, width).

    Keyword Arguments:
        settings {SaliencyConfig} -- Sigma, blur kernels and clustering parameters. If 'None'
            the defaults are used. (default: {None})

    Returns:
        SaliencyStore -- Compiled maps, gaps and (for denoised sources) cluster labelings.
    """
    source = SaliencySource(source)
    settings = settings or SaliencyConfig()
    image_size = tuple(image_size)
    store = SaliencyStore(source, fingerprint=saliency_fingerprint(source, settings, image_size))
    for sid in sample_ids:
        raw = inputs.get(sid, None)
        if raw is None or (isinstance(raw, (list, tuple)) and len(raw) == 0):
            store.gaps.append(sid)
            continue
        if source is SaliencySource.segmentation:
            smap = _compile_mask(sid, raw, source)
        elif source.is_hand:
            smap = _compile_annotations(raw, source, settings.kernels[source.value])
        else:
            smap = _compile_gaze(sid, raw, source, settings, image_size, store.labelings)
        if smap.shape != image_size:
            raise ValueError(f"Compiled map for {sid!r} has shape {smap.shape}, expected {image_size}")
        store.maps[sid] = smap
    n_empty = sum(m.empty for m in store.maps.values())
    if store.gaps:
        logger.warning("samples without saliency input are excluded from the saliency loss",
                       extra=dict(source=source.value, n_gaps=len(store.gaps)))
    logger.info("compiled saliency", extra=dict(source=source.value, n_maps=len(store.maps), n_empty=n_empty,
                                                n_gaps=len(store.gaps)))
    return store


def saliency_fingerprint(source, settings, image_size):
    """Fingerprint of the settings that influence maps of `source`."""
    source = SaliencySource(source)
    fields = dict(source=source.value, image_size=list(image_size))
    if source.is_hand:
        fields['kernel'] = settings.kernels[source.value]
    if source.is_gaze:
        fields['sigma_fraction'] = settings.sigma_fraction
    if source.denoised:
        fields.update(min_cluster_size=settings.min_cluster_size, min_samples=settings.min_samples,
                      allow_single_cluster=settings.allow_single_cluster)
    return utils.fingerprint(fields)


def load_raw_inputs(source, settings, sample_ids, image_size) -> Dict[str, object]:
    """Read the raw inputs of `source` from the paths in `settings.inputs`.

    Layout: segmentation masks as `<masks_dir>/<sample_id>.png`; annotations as
    `<annotations_dir>/<sample_id>/<annotator>.png`; fixations and remap sidecar as
    line-delimited files.
    """
    source = SaliencySource(source)
    inputs = settings.inputs
    out = {}
    if source is SaliencySource.segmentation:
        if inputs.masks_dir is None:
            raise ValueError("`saliency.inputs.masks_dir` is required for the segmentation source")
        for sid in sample_ids:
            path = Path(inputs.masks_dir) / f"{sid}.png"
            if path.exists():
                out[sid] = load_mask(path, image_size)
    elif source.is_hand:
        if inputs.annotations_dir is None:
            raise ValueError(f"`saliency.inputs.annotations_dir` is required for {source.value}")
        for sid in sample_ids:
            files = sorted((Path(inputs.annotations_dir) / sid).glob('*.png'))
            if files:
                out[sid] = AnnotationSet(sid, tuple(load_mask(f, image_size) for f in files))
    else:
        if inputs.gaze is None:
            raise ValueError(f"`saliency.inputs.gaze` is required for {source.value}")
        remaps = gaze.load_remap_coefficients(inputs.remap) if inputs.remap else {}
        sessions = gaze.load_gaze_sessions(inputs.gaze, remaps)
        wanted = set(sample_ids)
        out = {sid: s for sid, s in sessions.items() if sid in wanted}
    return out


def store_dir(root, source):
    return Path(root) / 'saliency' / SaliencySource(source).value


def save_store(store: SaliencyStore, root, png=False):
    """Persist `store` under `<root>/saliency/<source>/`. With `png=True` a 16-bit preview
    image is written next to every grid.
    """
    directory = store_dir(root, store.source)
    for sid, smap in store.maps.items():
        buffer = io.BytesIO()
        np.save(buffer, smap.values, allow_pickle=False)
        utils.atomic_write_bytes(directory / f"{sid}.npy", buffer.getvalue())
        if png:
            save_saliency_png(directory / f"{sid}.png", smap.values)
    index = dict(source=store.source.value, fingerprint=store.fingerprint, sample_ids=sorted(store.maps),
                 empty=sorted(sid for sid, m in store.maps.items() if m.empty), gaps=list(store.gaps))
    utils.atomic_write_json(directory / 'index.json', index)
    if store.labelings:
        utils.write_jsonl(directory / 'labelings.jsonl', store.labelings)
    return directory


def load_store(root, source) -> SaliencyStore:
    source = SaliencySource(source)
    directory = store_dir(root, source)
    index_path = directory / 'index.json'
    if not index_path.exists():
        raise FileNotFoundError(f"No compiled saliency for {source.value!r} under {directory}. "
                                f"Run `viser compile-saliency {source.value}` first.")
    index = utils.read_json(index_path)
    empty = set(index['empty'])
    maps = {sid: SaliencyMap(np.load(directory / f"{sid}.npy", allow_pickle=False), sid, source, sid in empty)
            for sid in index['sample_ids']}
    return SaliencyStore(source, maps, list(index['gaps']), index['fingerprint'])
