"""Convolutional backbones for two-class PAD.

Every backbone returns `(logits, features)` from `forward`, where `features` are the
rectified final-stage maps the classifier pools over. `classifier_weights` is the
(2, C) weight matrix of the final linear layer, so class activation maps can be formed
from the same tensors the classifier uses.
"""
from torch import nn
import torch.nn.functional as F
from torchvision.models import densenet121

N_CLASSES = 2


class BackboneAdapter(nn.Module):
    """Interface for backbones. Subclasses set `self.classifier` (an `nn.Linear(C, 2)`)
    and implement `features`.
    """
    descriptor = NotImplemented

    def features(self, input):
        raise NotImplementedError

    def forward(self, input):
        features = self.features(input)
        pooled = F.adaptive_avg_pool2d(features, 1).flatten(1)
        return self.classifier(pooled), features

    def predict(self, input):
        return self.forward(input)[0]

    @property
    def classifier_weights(self):
        return self.classifier.weight

    @property
    def n_channels(self):
        return self.classifier.in_features


class TinyCNN(BackboneAdapter):
    """One 3x3 convolution with ReLU at full resolution, global average pooling and a
    linear classifier. Meant for tests and desk-scale fixtures.

    Keyword Arguments:
        channels {int} -- Number of feature channels (default: {4})
        in_channels {int} -- Image channels (default: {1})
    """
    def __init__(self, channels=4, in_channels=1):
        super().__init__()
        self.channels = channels
        self.conv = nn.Conv2d(in_channels, channels, kernel_size=3, padding=1)
        self.classifier = nn.Linear(channels, N_CLASSES)

    @property
    def descriptor(self):
        return f"tiny:{self.channels}"

    def features(self, input):
        return F.relu(self.conv(input))


class DenseNet121Adapter(BackboneAdapter):
    """DenseNet-121 with a single-channel stem and a two-class head, the configuration
    used by D-NetPAD. Weights are randomly initialized.
    """
    descriptor = 'densenet121'

    def __init__(self, in_channels=1):
        super().__init__()
        net = densenet121(weights=None)
        net.features.conv0 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
        self.body = net.features
        self.classifier = nn.Linear(net.classifier.in_features, N_CLASSES)

    def features(self, input):
        return F.relu(self.body(input))


def make_backbone(descriptor) -> BackboneAdapter:
    """Build a backbone from its descriptor: `'densenet121'`, `'tiny'` or `'tiny:<channels>'`."""
    name, _, arg = str(descriptor).partition(':')
    if name == 'tiny':
        return TinyCNN(int(arg)) if arg else TinyCNN()
    if name == 'densenet121':
        if arg:
            raise ValueError(f"'densenet121' takes no argument, got {descriptor!r}")
        return DenseNet121Adapter()
    raise ValueError(f"Unknown backbone {descriptor!r}. Use 'densenet121', 'tiny' or 'tiny:<channels>'")


def is_backbone_descriptor(descriptor):
    try:
        name, _, arg = str(descriptor).partition(':')
        return (name == 'densenet121' and not arg) or (name == 'tiny' and (not arg or int(arg) > 0))
    except ValueError:
        return False
