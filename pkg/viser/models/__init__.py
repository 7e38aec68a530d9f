
from viser.models import backbones, cam, loss, base, data, training
from viser.models.backbones import TinyCNN, DenseNet121Adapter, make_backbone
from viser.models.base import PADModel, load_checkpoint
from viser.models.loss import SaliencyGuidedLoss, combined_loss
from viser.models.training import TrainingConfig, train_model
