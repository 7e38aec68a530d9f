"""Image and mask IO. Every image is grayscale, single channel, and resized to the
manifest `image_size` at load time, so CAMs and saliency maps share one coordinate frame.
"""
import logging
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)


def load_image(path, size):
    """Load a grayscale image as float32 in [0, 1].

    Arguments:
        path {str, Path} -- Image file.
        size {tuple} -- (height, width) to resize to.

    Returns:
        np.ndarray -- Array of shape `size`.
    """
    height, width = size
    with Image.open(path) as img:
        img = img.convert('L')
        if img.size != (width, height):
            img = img.resize((width, height), Image.Resampling.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.


def load_mask(path, size):
    """Load a 0/255 single-channel mask as a {0, 1} uint8 array of shape `size`."""
    height, width = size
    with Image.open(path) as img:
        img = img.convert('L')
        if img.size != (width, height):
            img = img.resize((width, height), Image.Resampling.NEAREST)
        return (np.asarray(img) > 127).astype(np.uint8)


def save_image(path, array):
    """Save a float image in [0, 1] as 8-bit grayscale."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.clip(np.asarray(array, dtype=np.float64), 0., 1.)
    Image.fromarray(np.round(array * 255).astype(np.uint8)).save(path)
    return path


def save_mask(path, mask):
    """Save a binary mask as a 0/255 grayscale image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)
    return path


def save_saliency_png(path, values):
    """Save a max-normalized saliency grid as a 16-bit grayscale image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.clip(np.asarray(values, dtype=np.float64), 0., 1.)
    Image.fromarray(np.round(values * 65535).astype(np.uint16)).save(path)
    return path


def load_images(samples, size):
    """Load the images of `samples` into one array.

    Unreadable images are replaced by zeros and reported rather than raised, so a
    single corrupt file does not abort a run.

    Arguments:
        samples {list of IrisSample} -- Samples to load.
        size {tuple} -- (height, width).

    Returns:
        tuple -- `(images, degraded)` with `images` of shape (n, 1, height, width) float32 and
            `degraded` the list of sample ids that could not be read.
    """
    images = np.zeros((len(samples), 1, *size), dtype=np.float32)
    degraded = []
    for i, sample in enumerate(samples):
        try:
            images[i, 0] = load_image(sample.image_path, size)
        except (OSError, ValueError) as err:
            degraded.append(sample.sample_id)
            logger.warning("unreadable image", extra=dict(sample_id=sample.sample_id, error=str(err)))
    if degraded:
        warnings.warn(f"{len(degraded)} of {len(samples)} images could not be read and are flagged degraded.")
    return images, degraded
