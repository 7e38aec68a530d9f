"""Class activation maps (CAM): classifier-weighted sums of the final feature maps."""
from typing import Tuple

import numpy as np
import torch
from torch import Tensor
import torch.nn.functional as F

from viser.saliency.maps import SaliencyMap, mass_fraction


def _upsample(cams: Tensor, size) -> Tensor:
    if tuple(cams.shape[-2:]) == tuple(size):
        return cams
    return F.interpolate(cams.unsqueeze(1), size=tuple(size), mode='bilinear', align_corners=False).squeeze(1)


def class_activation_maps(features: Tensor, weights: Tensor, size) -> Tuple[Tensor, Tensor]:
    """Batched, differentiable CAMs.

    Arguments:
        features {torch.tensor} -- Feature maps of shape (n, C, h, w).
        weights {torch.tensor} -- Per-sample channel weights of shape (n, C), typically the
            classifier row of the class of interest.
        size {tuple} -- (H, W) to upsample to.

    Returns:
        tuple -- `(cams, nonzero)`: max-normalized maps of shape (n, H, W) and a bool tensor
            that is false where the rectified map is identically zero (those maps are zeros).
    """
    if features.dim() != 4 or weights.dim() != 2 or features.shape[:2] != weights.shape:
        raise ValueError(f"Need features (n, C, h, w) and weights (n, C), got {tuple(features.shape)} "
                         f"and {tuple(weights.shape)}")
    cams = torch.einsum('nc,nchw->nhw', weights, features).relu()
    cams = _upsample(cams, size)
    peak = cams.flatten(1).max(1)[0]
    nonzero = peak > 0
    denom = torch.where(nonzero, peak, torch.ones_like(peak))
    return cams / denom.view(-1, 1, 1), nonzero


def compute_cam(features, classifier_weights, upsample_to, sample_id='') -> SaliencyMap:
    """CAM of a single sample: `relu(sum_c w_c F_c)`, bilinearly upsampled and max-normalized.

    Arguments:
        features {np.ndarray, torch.tensor} -- Feature maps of shape (C, h, w).
        classifier_weights {np.ndarray, torch.tensor} -- Length C weights.
        upsample_to {tuple} -- (H, W).

    Returns:
        SaliencyMap -- The CAM, flagged `empty` when the rectified sum is zero everywhere.
    """
    features = torch.as_tensor(features, dtype=torch.float64)
    weights = torch.as_tensor(classifier_weights, dtype=torch.float64).reshape(-1)
    if features.dim() != 3:
        raise ValueError(f"`features` needs shape (C, h, w), got {tuple(features.shape)}")
    if weights.shape[0] != features.shape[0]:
        raise ValueError(f"Got {weights.shape[0]} weights for {features.shape[0]} feature channels")
    with torch.no_grad():
        cams, nonzero = class_activation_maps(features.unsqueeze(0), weights.unsqueeze(0), upsample_to)
    return SaliencyMap(cams[0].numpy(), sample_id, None, empty=not bool(nonzero[0]))


def predict_cams(model, input, classes=None, batch_size=64):
    """CAMs of a trained `PADModel` for `input`.

    Arguments:
        model {PADModel} -- Trained model.
        input {np.ndarray} -- Images of shape (n, 1, H, W).

    Keyword Arguments:
        classes {np.ndarray} -- Class whose classifier row weights the maps. If 'None' the
            attack class is used. (default: {None})
        batch_size {int} -- (default: {64})

    Returns:
        np.ndarray -- Max-normalized CAMs of shape (n, H, W).
    """
    net = model.net
    was_training = net.training
    net.eval()
    input = torch.as_tensor(input, dtype=torch.float32)
    n = input.shape[0]
    classes = torch.ones(n, dtype=torch.long) if classes is None else torch.as_tensor(classes, dtype=torch.long)
    out = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            x = input[start:start+batch_size].to(model.device)
            _, features = net(x)
            weights = net.classifier_weights[classes[start:start+batch_size].to(model.device)]
            cams, _ = class_activation_maps(features, weights, x.shape[-2:])
            out.append(cams.cpu())
    net.train(was_training)
    return torch.cat(out).numpy()


def cam_mass_fraction(model, input, region, classes=None):
    """Mean fraction of CAM mass that falls inside `region` (bool (H, W) or (n, H, W))."""
    cams = predict_cams(model, input, classes)
    region = np.broadcast_to(np.asarray(region, dtype=bool), cams.shape)
    return float(np.mean([mass_fraction(c, r) for c, r in zip(cams, region)]))
