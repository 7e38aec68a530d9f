import pytest
import torch

from viser.models.backbones import TinyCNN
from viser.models.base import PADModel, load_checkpoint, save_checkpoint
from utils_model_testing import make_dataset, fit_model, assert_scores


@pytest.mark.parametrize('numpy', [True, False])
@pytest.mark.parametrize('alpha', [0., 0.5])
def test_pad_model_runs(numpy, alpha):
    data = make_dataset(numpy)
    torch.manual_seed(0)
    model = PADModel(TinyCNN(2), alpha=alpha)
    fit_model(data, model)
    assert_scores(data[0], model)


def test_pad_model_binds_loss():
    net = TinyCNN(2)
    model = PADModel(net, alpha=0.3)
    assert model.loss.alpha == 0.3
    assert model.loss._net[0] is net


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(0)
    net = TinyCNN(3)
    path = save_checkpoint(tmp_path / 'run' / 'checkpoint.pt', net, 'abc', 7, dict(alpha=0.5))
    model, blob = load_checkpoint(path)
    assert blob['fingerprint'] == 'abc'
    assert blob['seed'] == 7
    assert blob['config'] == dict(alpha=0.5)
    assert blob['descriptor'] == 'tiny:3'
    for key, value in net.state_dict().items():
        assert torch.equal(model.net.state_dict()[key], value)
    input = torch.rand(4, 1, 6, 6)
    assert torch.equal(model.predict_proba(input), PADModel(net).predict_proba(input))
