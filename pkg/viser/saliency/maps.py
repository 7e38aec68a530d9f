"""Saliency maps and the pure operations on them."""
import enum
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, stats


class SaliencySource(str, enum.Enum):
    segmentation = 'segmentation'
    hand_low = 'hand_low'
    hand_equal = 'hand_equal'
    hand_high = 'hand_high'
    et_full = 'et_full'
    et_initial = 'et_initial'
    et_full_denoised = 'et_full_denoised'
    et_initial_denoised = 'et_initial_denoised'

    @property
    def is_hand(self):
        return self.value.startswith('hand_')

    @property
    def is_gaze(self):
        return self.value.startswith('et_')

    @property
    def denoised(self):
        return self.value.endswith('_denoised')

    @property
    def initial_only(self):
        return self.value.startswith('et_initial')


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Non-negative H x W grid aligned to the image frame.

    Arguments:
        values {np.ndarray} -- 2-D grid of non-negative finite values.
        sample_id {str} -- Sample the map belongs to.

    Keyword Arguments:
        source {SaliencySource} -- Producing source, or None for model maps (CAMs).
        empty {bool} -- Flag for all-zero maps that could not be normalized.
    """
    values: np.ndarray
    sample_id: str = ''
    source: Optional[SaliencySource] = None
    empty: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"Saliency values need to be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError(f"Saliency map for {self.sample_id!r} has non-finite values")
        if (values < 0).any():
            raise ValueError(f"Saliency map for {self.sample_id!r} has negative values")
        object.__setattr__(self, 'values', values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def with_values(self, values, empty=False):
        return replace(self, values=values, empty=empty)


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Binary masks from several annotators for one sample."""
    sample_id: str
    masks: Tuple[np.ndarray, ...]

    def __post_init__(self):
        masks = tuple(np.asarray(m) for m in self.masks)
        if len(masks) == 0:
            raise ValueError(f"AnnotationSet {self.sample_id!r} has no masks")
        shape = masks[0].shape
        for m in masks:
            if m.shape != shape or m.ndim != 2:
                raise ValueError(f"AnnotationSet {self.sample_id!r}: masks need one 2-D shape, "
                                 f"got {[mm.shape for mm in masks]}")
            if not np.isin(m, (0, 1)).all():
                raise ValueError(f"AnnotationSet {self.sample_id!r}: masks need values in {{0, 1}}")
        object.__setattr__(self, 'masks', masks)


def normalize_map(smap: SaliencyMap) -> SaliencyMap:
    """Max-normalize so the largest value is 1. An all-zero map is returned flagged `empty`."""
    peak = smap.values.max()
    if peak <= 0:
        return smap.with_values(np.zeros_like(smap.values), empty=True)
    return smap.with_values(smap.values / peak)


def gaussian_sigma(kernel: int) -> float:
    """Gaussian standard deviation for a kernel size, following the usual
    `0.3 * ((k - 1) / 2 - 1) + 0.8` rule of thumb.
    """
    return 0.3 * ((kernel - 1) * 0.5 - 1) + 0.8


def blur_map(smap: SaliencyMap, kernel: int) -> SaliencyMap:
    """Separable Gaussian blur with kernel radius `kernel // 2` and half-sample symmetric
    borders. Total mass is preserved. `kernel=0` is the identity.

    Arguments:
        smap {SaliencyMap} -- Map to blur.
        kernel {int} -- Kernel size (0 for no blur).

    Returns:
        SaliencyMap -- Blurred map (not re-normalized).
    """
    if int(kernel) != kernel or kernel < 0:
        raise ValueError(f"`kernel` needs to be a non-negative integer, got {kernel}")
    kernel = int(kernel)
    if kernel == 0:
        return smap.with_values(smap.values.copy(), smap.empty)
    values = ndimage.gaussian_filter(smap.values, sigma=gaussian_sigma(kernel), mode='reflect',
                                     radius=kernel // 2)
    return smap.with_values(values, smap.empty)


def map_entropy(smap: SaliencyMap) -> float:
    """Shannon entropy in bits of the map seen as a probability distribution over pixels."""
    total = smap.values.sum()
    if total <= 0:
        raise ValueError(f"Map entropy undefined for an all-zero map ({smap.sample_id!r})")
    p = smap.values[smap.values > 0].ravel()
    return float(stats.entropy(p / total, base=2))


def aggregate_maps(maps: Sequence[SaliencyMap], normalize=True) -> SaliencyMap:
    """Pixel-wise mean over maps of one sample.

    Arguments:
        maps {list of SaliencyMap} -- Non-empty list with one shape and sample_id.

    Keyword Arguments:
        normalize {bool} -- Max-normalize the mean (default: {True})

    Returns:
        SaliencyMap -- The aggregated map.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("Cannot aggregate an empty list of maps")
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"Cannot aggregate maps with different shapes {sorted(shapes)}")
    sample_ids = {m.sample_id for m in maps}
    if len(sample_ids) != 1:
        raise ValueError(f"Cannot aggregate maps of different samples {sorted(sample_ids)}")
    stack = np.stack([m.values for m in maps])
    # Sorted per pixel so the summation order does not depend on input order.
    mean = np.sort(stack, axis=0).mean(axis=0)
    out = SaliencyMap(mean, maps[0].sample_id, maps[0].source)
    return normalize_map(out) if normalize else out


def average_annotations(ann: AnnotationSet) -> SaliencyMap:
    """Per-pixel fraction of annotators that marked the pixel."""
    stack = np.stack(ann.masks).astype(np.float64)
    return SaliencyMap(stack.mean(axis=0), ann.sample_id)


def mass_fraction(values, region) -> float:
    """Fraction of the total mass of `values` that lies inside the boolean `region`."""
    values = np.asarray(values, dtype=np.float64)
    total = values.sum()
    if total <= 0:
        return 0.
    return float(values[np.asarray(region, dtype=bool)].sum() / total)
