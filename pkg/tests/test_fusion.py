import numpy as np
import pytest
import torch

import properties
from gradcheck import finite_difference_check
from dualground.fusion import FusionBlock


def _seeded(dim=6, literal=True, seed=0):
    block = FusionBlock(dim, literal_residual_norm=literal)
    block.reset_parameters(torch.Generator().manual_seed(seed))
    return block


def _layer_norm(x, eps=1e-5):
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)  # biased, matching LayerNorm
    return (x - mean) / np.sqrt(var + eps)


def test_shapes_and_split_order():
    block = _seeded()
    dyn = torch.randn(4, 6, dtype=torch.float64)
    sta = torch.randn(4, 6, dtype=torch.float64)
    qry = torch.randn(3, 6, dtype=torch.float64)
    out_dyn, out_sta, out_qry = block(dyn, sta, qry)
    assert out_dyn.shape == (4, 6) and out_sta.shape == (4, 6) and out_qry.shape == (3, 6)
    # row-wise block: each segment depends only on its own rows
    solo_dyn, _, _ = block(dyn, torch.randn(4, 6, dtype=torch.float64), qry)
    assert torch.equal(out_dyn, solo_dyn)


def test_no_queries_degenerate_split():
    block = _seeded()
    dyn = torch.randn(4, 6, dtype=torch.float64)
    sta = torch.randn(4, 6, dtype=torch.float64)
    out_dyn, out_sta, out_qry = block(dyn, sta, torch.zeros(0, 6, dtype=torch.float64))
    assert out_qry.shape == (0, 6)
    assert torch.isfinite(out_dyn).all() and torch.isfinite(out_sta).all()


def test_zero_mlp_identity_affine_closed_form():
    block = _seeded()
    with torch.no_grad():
        block.fc1.weight.zero_()
        block.fc1.bias.zero_()
        block.fc2.weight.zero_()
        block.fc2.bias.zero_()
    x = np.random.default_rng(0).normal(size=(5, 6))
    dyn = torch.as_tensor(x[:2])
    sta = torch.as_tensor(x[2:4])
    qry = torch.as_tensor(x[4:])
    out = torch.cat(block(dyn, sta, qry), dim=0).detach().numpy()
    want = _layer_norm(x + _layer_norm(x))
    assert np.abs(out - want).max() < 1e-10


def test_row_statistics_of_layer_norm():
    rng = np.random.default_rng(1)
    x = rng.normal(scale=2.0, size=(10, 32))
    norm = torch.nn.LayerNorm(32, eps=1e-5, dtype=torch.float64)
    out = norm(torch.as_tensor(x)).detach().numpy()
    assert np.abs(out.mean(axis=1)).max() < 1e-6
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-5


def test_rejects_zero_width_and_mismatched_streams():
    with pytest.raises(ValueError):
        FusionBlock(0)
    block = _seeded()
    with pytest.raises(ValueError):
        block(torch.zeros(3, 6, dtype=torch.float64),
              torch.zeros(4, 6, dtype=torch.float64),
              torch.zeros(1, 6, dtype=torch.float64))


def test_literal_toggle_changes_output():
    literal = _seeded(literal=True, seed=3)
    plain = _seeded(literal=False, seed=3)
    dyn = torch.randn(3, 6, dtype=torch.float64)
    sta = torch.randn(3, 6, dtype=torch.float64)
    qry = torch.randn(2, 6, dtype=torch.float64)
    a = torch.cat(literal(dyn, sta, qry), dim=0)
    b = torch.cat(plain(dyn, sta, qry), dim=0)
    assert not torch.allclose(a, b)


def test_fusion_gradients(rng):
    block = _seeded(seed=5)
    dyn = torch.randn(3, 6, dtype=torch.float64, requires_grad=True)
    sta = torch.randn(3, 6, dtype=torch.float64, requires_grad=True)
    qry = torch.randn(2, 6, dtype=torch.float64, requires_grad=True)
    probe = torch.randn(8, 6, dtype=torch.float64)

    def loss():
        out = torch.cat(block(dyn, sta, qry), dim=0)
        return (out * probe).sum() + (out ** 3).sum() * 0.01

    finite_difference_check(loss, [dyn, sta, qry, *block.parameters()], rng,
                            samples_per_block=6)


def test_permutation_property_sample():
    properties.prop_fusion_query_permutation(50, 6)
