"""Array assembly for training and scoring."""
import logging
import threading
import warnings

import numpy as np
import torchtuples as tt

from viser.datasets._dataset_loader import load_images

logger = logging.getLogger(__name__)


class ImageCache:
    """Images loaded once per process at a fixed size and shared read-only between runs.

    Arguments:
        image_size {tuple} -- (height, width).
    """
    def __init__(self, image_size):
        self.image_size = tuple(image_size)
        self._images = {}
        self._degraded = set()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._images)

    @property
    def degraded(self):
        return set(self._degraded)

    def get(self, samples):
        """Images of `samples` as one (n, 1, H, W) float32 array, loading only unseen ones.

        Returns:
            tuple -- `(images, degraded)` with `degraded` the ids among `samples` that could
                not be read (their images are zeros).
        """
        samples = list(samples)
        with self._lock:
            missing = [s for s in samples if s.sample_id not in self._images]
            if missing:
                images, degraded = load_images(missing, self.image_size)
                for sample, image in zip(missing, images):
                    self._images[sample.sample_id] = image
                self._degraded.update(degraded)
            out = np.stack([self._images[s.sample_id] for s in samples]) if samples else \
                np.zeros((0, 1, *self.image_size), dtype=np.float32)
        return out, [s.sample_id for s in samples if s.sample_id in self._degraded]


def labels_of(samples):
    """Class indices, 0 bonafide and 1 attack."""
    return np.array([s.label.target for s in samples], dtype=np.int64)


def training_arrays(samples, saliency_store, image_size, image_cache=None):
    """Input and target for `PADModel.fit`. Samples whose image cannot be read are left
    out rather than trained on as blank frames.

    Without a saliency store the target carries a (n, 1, 1) zero placeholder and
    `has_target` false everywhere, so every sample contributes only cross-entropy.

    Arguments:
        samples {list of IrisSample} -- Training samples.
        saliency_store {SaliencyStore} -- Compiled targets, or 'None'.
        image_size {tuple} -- (height, width).

    Keyword Arguments:
        image_cache {ImageCache} -- Shared cache. If 'None' a private one is used. (default: {None})

    Returns:
        tuple -- `(input, target, dropped)` with `target = (labels, targets, has_target)` and
            `dropped` the ids of the unreadable samples that were left out.
    """
    samples = list(samples)
    image_cache = ImageCache(image_size) if image_cache is None else image_cache
    images, degraded = image_cache.get(samples)
    if degraded:
        bad = set(degraded)
        keep = np.array([s.sample_id not in bad for s in samples], dtype=bool)
        images = images[keep]
        samples = [s for s in samples if s.sample_id not in bad]
        warnings.warn(f"Dropped {len(degraded)} unreadable images from training.")
        logger.warning("dropped degraded training images", extra=dict(n_degraded=len(degraded)))
    labels = labels_of(samples)
    if saliency_store is None:
        targets = np.zeros((len(samples), 1, 1), dtype=np.float32)
        has_target = np.zeros(len(samples), dtype=bool)
    else:
        targets, has_target = saliency_store.target_arrays([s.sample_id for s in samples], image_size)
    return images, tt.tuplefy(labels, targets, has_target), list(degraded)
