import numpy as np
import pytest
import torch

from noteclass.model import (
    ModelConfig,
    NoteClassifier,
    analytic_param_count,
    count_params,
    load_checkpoint,
    predict_class,
    save_checkpoint,
)
from noteclass.notes import DataError

TINY = ModelConfig(input_bins=8, input_frames=8, stages=1, growth_rate=2,
                   dense_layers=2, fc_hidden=8)


def test_config_validation():
    with pytest.raises(DataError):
        ModelConfig(stages=0)
    with pytest.raises(DataError):
        ModelConfig(branches=())
    with pytest.raises(DataError):
        ModelConfig(growth_rate=0)
    with pytest.raises(DataError):
        ModelConfig(branches=((2, 2),))  # even kernels break same-size padding


def test_dense_block_layer_param_counts():
    # (3x3) kernels, c_in 2, k=25, L=4: weights 450, 6075, 11700, 17325
    model = NoteClassifier(ModelConfig(branches=((3, 3),)))
    block = model.stages[0].branches[0]
    weights = [conv.weight.numel() for conv in block.convs]
    biases = [conv.bias.numel() for conv in block.convs]
    assert weights == [450, 6075, 11700, 17325]
    assert biases == [25, 25, 25, 25]


def test_dense_block_output_channels_and_spatial():
    model = NoteClassifier(ModelConfig())
    block = model.stages[0].branches[0]
    x = torch.randn(1, 2, 64, 21)
    out = block(x)
    assert out.shape == (1, 25, 64, 21)  # spatial preserved, k channels out


def test_stage_ladder_default():
    cfg = ModelConfig()
    assert cfg.spatial_ladder() == [(128, 22), (64, 11), (32, 6), (16, 3)]
    model = NoteClassifier(cfg)
    model.eval()
    maps = model.stage_maps(torch.randn(1, 2, 256, 43))
    assert [tuple(m.shape[1:]) for m in maps] == [
        (75, 128, 22), (75, 64, 11), (75, 32, 6), (75, 16, 3)]


def test_single_branch_channels():
    cfg = ModelConfig.single_square_k57()
    model = NoteClassifier(cfg)
    model.eval()
    maps = model.stage_maps(torch.randn(1, 2, 256, 43))
    assert maps[0].shape[1] == 57


def test_stage_input_channel_contract():
    # every stage after the first consumes all 3k channels
    model = NoteClassifier(ModelConfig())
    for stage in model.stages[1:]:
        for branch in stage.branches:
            assert branch.convs[0].in_channels == 75


def test_param_budget_default():
    cfg = ModelConfig()
    model = NoteClassifier(cfg)
    n = count_params(model)
    assert n == analytic_param_count(cfg)
    assert 1_000_000 <= n <= 1_250_000


def test_param_budget_k57_parity():
    base = analytic_param_count(ModelConfig())
    k57 = analytic_param_count(ModelConfig.single_square_k57())
    assert abs(k57 - base) / base < 0.15


def test_analytic_count_matches_on_variants():
    variants = [
        TINY,
        ModelConfig.triple_square(),
        ModelConfig(input_bins=115),
        ModelConfig(stages=2, growth_rate=7, dense_layers=3, fc_hidden=16),
    ]
    for cfg in variants:
        assert count_params(NoteClassifier(cfg)) == analytic_param_count(cfg)


def test_forward_softmax_batch():
    model = NoteClassifier(TINY)
    model.eval()
    x = torch.randn(5, 2, 8, 8)
    with torch.no_grad():
        probs = model.predict_proba(x)
    assert probs.shape == (5, 7)
    assert torch.allclose(probs.sum(1), torch.ones(5), atol=1e-6)
    assert (probs > 0).all() and (probs < 1).all()


def test_forward_deterministic_for_duplicates():
    model = NoteClassifier(TINY)
    model.eval()
    x = torch.randn(1, 2, 8, 8)
    batch = torch.cat([x, x])
    with torch.no_grad():
        probs = model.predict_proba(batch)
    assert torch.equal(probs[0], probs[1])


def test_batch_permutation_equivariance():
    model = NoteClassifier(TINY)
    model.eval()
    x = torch.randn(6, 2, 8, 8)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    with torch.no_grad():
        a = model.predict_proba(x)[perm]
        b = model.predict_proba(x[perm])
    assert torch.allclose(a, b, atol=1e-6)


def test_logit_shift_invariance():
    logits = np.array([0.3, -1.2, 2.0, 0.1, 0.0, -0.5, 1.9])
    probs = np.exp(logits) / np.exp(logits).sum()
    shifted = np.exp(logits + 7.5) / np.exp(logits + 7.5).sum()
    assert predict_class(probs) == predict_class(shifted)


def test_input_shape_mismatch():
    model = NoteClassifier(TINY)
    with pytest.raises(DataError):
        model(torch.randn(1, 2, 16, 8))


def test_predict_class_rules():
    assert predict_class([0.1, 0.7, 0.05, 0.05, 0.05, 0.03, 0.02]) == 1
    assert predict_class(np.full(7, 1.0 / 7.0)) == 0  # tie-break: lowest index
    one_hot = np.zeros(7)
    one_hot[4] = 1.0
    assert predict_class(one_hot) == 4
    with pytest.raises(DataError):
        predict_class([0.5, np.nan, 0.5])


def test_checkpoint_roundtrip(tmp_path):
    model = NoteClassifier(TINY)
    model.eval()
    x = torch.randn(3, 2, 8, 8)
    with torch.no_grad():
        before = model.predict_proba(x)
    path = tmp_path / "m.pt"
    save_checkpoint(model, path, extra={"note": "test"})
    loaded, cfg, extra = load_checkpoint(path, expected_cfg=TINY)
    assert cfg == TINY
    assert extra["note"] == "test"
    with torch.no_grad():
        after = loaded.predict_proba(x)
    assert torch.allclose(before, after)


def test_checkpoint_config_mismatch(tmp_path):
    model = NoteClassifier(TINY)
    path = tmp_path / "m.pt"
    save_checkpoint(model, path)
    with pytest.raises(DataError, match="mismatch"):
        load_checkpoint(path, expected_cfg=ModelConfig())


def test_gradients_match_finite_differences():
    """Autograd gradients vs central finite differences on the tiny config,
    in float64; relative error below 1e-3 for every parameter."""
    torch.manual_seed(1)
    model = NoteClassifier(TINY).double()
    model.train()
    x = torch.randn(4, 2, 8, 8, dtype=torch.float64)
    y = torch.tensor([0, 3, 6, 1])

    def loss_value():
        return torch.nn.functional.cross_entropy(model(x), y)

    loss = loss_value()
    loss.backward()
    h = 1e-6
    worst = 0.0
    for param in model.parameters():
        grad = param.grad.detach().clone().reshape(-1)
        flat = param.data.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_value().item()
            flat[i] = orig - h
            down = loss_value().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(grad[i].item()), 1e-8)
            rel = abs(numeric - grad[i].item()) / denom
            if abs(numeric - grad[i].item()) > 1e-10:
                worst = max(worst, rel)
    assert worst < 1e-3
