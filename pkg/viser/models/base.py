import io
import logging

import torch
import torchtuples as tt

from viser import utils
from viser.models.backbones import make_backbone
from viser.models.loss import SaliencyGuidedLoss

logger = logging.getLogger(__name__)


class PADModel(tt.Model):
    """Two-class presentation attack detector around a `BackboneAdapter`.
    Essentially a torchtuples.Model whose loss is `SaliencyGuidedLoss`.

    Arguments:
        net {BackboneAdapter} -- Backbone returning `(logits, features)`.

    Keyword Arguments:
        loss {SaliencyGuidedLoss} -- If 'None' a loss with weight `alpha` is created. (default: {None})
        optimizer {Optimizer} -- A torch optimizer or similar. If 'None' set to torchtuples.optim.AdamW.
            (default: {None})
        device {str, int, torch.device} -- Device to compute on. (default: {None})
        alpha {float} -- Saliency weight when `loss` is 'None'. (default: {0.})
    """
    def __init__(self, net, loss=None, optimizer=None, device=None, alpha=0.):
        if loss is None:
            loss = SaliencyGuidedLoss(alpha)
        loss.bind(net)
        super().__init__(net, loss, optimizer, device)

    def predict_logits(self, input, batch_size=256, numpy=None, eval_=True, to_cpu=False, num_workers=0):
        """Predict the two class logits for `input`.

        Arguments:
            input {np.ndarray or torch.tensor} -- Images of shape (n, 1, H, W).

        Keyword Arguments:
            batch_size {int} -- Batch size (default: {256})
            numpy {bool} -- 'False' gives tensor, 'True' gives numpy, and None give same as input
                (default: {None})
            eval_ {bool} -- If 'True', use 'eval' mode on net. (default: {True})
            to_cpu {bool} -- For larger data sets we need to move the results to cpu
                (default: {False})
            num_workers {int} -- Number of workers in created dataloader (default: {0})

        Returns:
            [np.ndarray or tensor] -- Logits of shape (n, 2).
        """
        preds = self.predict(input, batch_size, False, eval_, False, to_cpu, num_workers)
        if isinstance(preds, tuple):
            preds = preds[0]
        return tt.utils.array_or_tensor(preds, numpy, input)

    def predict_proba(self, input, batch_size=256, numpy=None, eval_=True, to_cpu=False, num_workers=0):
        """Attack-class probability (softmax over the two logits), the PAD score."""
        logits = self.predict_logits(input, batch_size, False, eval_, to_cpu, num_workers)
        return tt.utils.array_or_tensor(logits.softmax(1)[:, 1], numpy, input)


def save_checkpoint(path, net, fingerprint, seed, config=None):
    """Write backbone descriptor, parameters, config fingerprint and seed to `path`."""
    blob = dict(descriptor=net.descriptor, state_dict=net.state_dict(), fingerprint=fingerprint,
                seed=int(seed), config=config)
    buffer = io.BytesIO()
    torch.save(blob, buffer)
    utils.atomic_write_bytes(path, buffer.getvalue())
    return path


def load_checkpoint(path, device=None):
    """Rebuild a `PADModel` from a checkpoint written by `save_checkpoint`.

    Returns:
        tuple -- `(model, blob)` where `blob` holds `fingerprint`, `seed` and `config`.
    """
    blob = torch.load(path, map_location='cpu', weights_only=False)
    net = make_backbone(blob['descriptor'])
    net.load_state_dict(blob['state_dict'])
    model = PADModel(net, device=device)
    logger.debug("loaded checkpoint", extra=dict(path=str(path), descriptor=blob['descriptor']))
    return model, blob
