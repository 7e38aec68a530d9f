from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import Tensor
import torch.nn.functional as F

from viser.models.cam import class_activation_maps


def _values(smap):
    return smap.values if hasattr(smap, 'values') and not isinstance(smap, (np.ndarray, Tensor)) else smap


def saliency_mse(cam, target) -> float:
    """Mean over pixels of `(cam - target)^2`.

    Arguments:
        cam {SaliencyMap, np.ndarray} -- Max-normalized model map.
        target {SaliencyMap, np.ndarray} -- Max-normalized target map.

    Returns:
        float -- The mean squared error.
    """
    cam = np.asarray(_values(cam), dtype=np.float64)
    target = np.asarray(_values(target), dtype=np.float64)
    if cam.shape != target.shape:
        raise ValueError(f"CAM shape {cam.shape} does not match target shape {target.shape}")
    return float(np.mean((cam - target)**2))


@dataclass
class LossBreakdown:
    """Terms of the composite loss for one batch. Tensor fields stay attached to the graph."""
    total: Tensor
    ce: Tensor
    saliency_mse: Tensor
    n_samples_with_saliency: int

    def to_dict(self):
        return dict(total=float(self.total), ce=float(self.ce), saliency_mse=float(self.saliency_mse),
                    n_samples_with_saliency=int(self.n_samples_with_saliency))


def combined_loss(logits: Tensor, label: Tensor, cam: Optional[Tensor], target: Optional[Tensor], alpha: float,
                  has_target: Optional[Tensor] = None, cam_ok: Optional[Tensor] = None) -> LossBreakdown:
    """Cross-entropy plus CAM-to-target mean squared error:

    total = (1 - alpha) * ce + alpha * mse   when any sample has a target,
    total = ce                               otherwise.

    The MSE is the mean over samples with a target of the per-pixel mean squared error.

    Arguments:
        logits {torch.tensor} -- Logits of shape (n, 2) or (2,).
        label {torch.tensor} -- Class indices (0 bonafide, 1 attack) of shape (n,) or ().
        cam {torch.tensor} -- Max-normalized CAMs (n, H, W), or None.
        target {torch.tensor} -- Max-normalized targets (n, H, W), or None when absent.
        alpha {float} -- Weight of the saliency term in [0, 1].

    Keyword Arguments:
        has_target {torch.tensor} -- Bool (n,), samples that carry a target. If 'None' all do
            when `target` is given. (default: {None})
        cam_ok {torch.tensor} -- Bool (n,), false for degenerate all-zero CAMs, which are
            left out of the saliency term. (default: {None})

    Returns:
        LossBreakdown -- Total and component terms.
    """
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
        label = torch.as_tensor(label).view(1)
        cam = cam.unsqueeze(0) if cam is not None else None
        target = target.unsqueeze(0) if target is not None else None
    label = label.long().view(-1)
    ce = F.cross_entropy(logits, label)
    zero = ce.new_zeros(())
    if target is None or cam is None or alpha == 0:
        return LossBreakdown(ce, ce, zero, 0)
    n = logits.shape[0]
    use = torch.ones(n, dtype=torch.bool, device=logits.device) if has_target is None else has_target.bool().view(-1)
    if cam_ok is not None:
        use = use & cam_ok.bool().view(-1)
    n_use = int(use.sum())
    if n_use == 0:
        return LossBreakdown(ce, ce, zero, 0)
    if cam.shape != target.shape:
        raise ValueError(f"CAM shape {tuple(cam.shape)} does not match target shape {tuple(target.shape)}")
    per_sample = (cam[use] - target[use].to(cam.dtype)).pow(2).flatten(1).mean(1)
    mse = per_sample.mean()
    total = (1. - alpha) * ce + alpha * mse
    return LossBreakdown(total, ce, mse, n_use)


class SaliencyGuidedLoss(torch.nn.Module):
    """Composite loss used for training. Called by torchtuples as
    `loss(logits, features, labels, targets, has_target)`.

    The CAM is formed from the classifier row of the ground-truth class. `last_breakdown`
    holds the terms of the most recent call (detached) for logging.

    Arguments:
        alpha {float} -- Weight of the saliency term. With `alpha=0` this is plain cross-entropy.
    """
    def __init__(self, alpha: float = 0.5) -> None:
        super().__init__()
        if not 0. <= alpha <= 1.:
            raise ValueError(f"`alpha` needs to be in [0, 1], got {alpha}")
        self.alpha = alpha
        self._net = None
        self.last_breakdown = None
        self.n_zero_cams = 0

    def bind(self, net):
        """Give the loss access to the backbone's classifier weights."""
        self._net = [net]  # list, so the net is not registered as a submodule
        return self

    def forward(self, logits: Tensor, features: Tensor, labels: Tensor, targets: Tensor,
                has_target: Tensor) -> Tensor:
        labels = labels.long().view(-1)
        cams = cam_ok = None
        if self.alpha > 0 and bool(has_target.any()):
            if self._net is None:
                raise RuntimeError("SaliencyGuidedLoss needs `bind(net)` before use with saliency targets")
            weights = self._net[0].classifier_weights[labels]
            cams, cam_ok = class_activation_maps(features, weights, targets.shape[-2:])
            self.n_zero_cams += int((has_target.bool() & ~cam_ok).sum())
        else:
            targets = None
        breakdown = combined_loss(logits, labels, cams, targets, self.alpha, has_target, cam_ok)
        self.last_breakdown = LossBreakdown(breakdown.total.detach(), breakdown.ce.detach(),
                                            breakdown.saliency_mse.detach(), breakdown.n_samples_with_saliency)
        return breakdown.total
