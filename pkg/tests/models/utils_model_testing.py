import numpy as np
import torch
import torchtuples as tt


def make_dataset(numpy, n=16, size=(8, 8), with_target=True, seed=0):
    """Random images with a `(labels, targets, has_target)` target tuple."""
    g = torch.Generator().manual_seed(seed)
    input = torch.rand((n, 1, *size), generator=g)
    labels = torch.arange(2).repeat(n // 2)
    if with_target:
        targets = torch.rand((n, *size), generator=g)
        targets = targets / targets.flatten(1).max(1)[0].view(-1, 1, 1)
        has_target = torch.ones(n, dtype=torch.bool)
        has_target[::4] = False
    else:
        targets = torch.zeros((n, 1, 1))
        has_target = torch.zeros(n, dtype=torch.bool)
    data = tt.tuplefy(input, (labels, targets, has_target))
    if numpy:
        data = data.to_numpy()
    return data


def fit_model(data, model, epochs=1):
    model.fit(*data, batch_size=8, epochs=epochs, verbose=False)
    return model


def assert_scores(input, model):
    preds = model.predict_proba(input)
    assert type(preds) is type(input)
    assert preds.shape == (input.shape[0],)
    np_input = tt.tuplefy(input).to_numpy()[0]
    torch_input = tt.tuplefy(input).to_tensor()[0]
    np_preds = model.predict_proba(np_input)
    torch_preds = model.predict_proba(torch_input)
    assert (np_preds == torch_preds.cpu().numpy()).all()
    assert ((np_preds >= 0) & (np_preds <= 1)).all()
    logits = model.predict_logits(np_input)
    softmax = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    assert np.abs(softmax[:, 1] - np_preds).max() < 1e-6
