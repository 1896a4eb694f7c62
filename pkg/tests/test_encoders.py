import numpy as np
import pytest
import torch

import oracles
import properties
from gradcheck import finite_difference_check
from dualground.encoders import DynamicEncoder, StaticEncoder, TextEncoder


def _seeded(module, seed=0):
    module.reset_parameters(torch.Generator().manual_seed(seed))
    return module


def test_dynamic_zero_input_zero_bias():
    enc = _seeded(DynamicEncoder(6, 4))
    with torch.no_grad():
        enc.conv.bias.zero_()
        enc.proj.bias.zero_()
    out = enc(torch.zeros(5, 6, dtype=torch.float64))
    assert torch.equal(out, torch.zeros(5, 4, dtype=torch.float64))


def test_dynamic_delta_kernel_identity():
    dim = 5
    enc = _seeded(DynamicEncoder(dim, dim))
    with torch.no_grad():
        enc.conv.weight.zero_()
        for c in range(dim):
            enc.conv.weight[c, c, 1] = 1.0  # center tap only
        enc.conv.bias.zero_()
        enc.proj.weight.copy_(torch.eye(dim, dtype=torch.float64))
        enc.proj.bias.zero_()
    x = torch.randn(7, dim, dtype=torch.float64)
    assert torch.allclose(enc(x), x, atol=1e-12)


def test_dynamic_matches_summation_oracle(rng):
    enc = _seeded(DynamicEncoder(6, 4), seed=3)
    x = torch.as_tensor(rng.normal(size=(9, 6)))
    got = enc(x).detach().numpy()
    conv_out = oracles.conv1d_same(x.numpy(),
                                   enc.conv.weight.detach().numpy(),
                                   enc.conv.bias.detach().numpy())
    want = conv_out @ enc.proj.weight.detach().numpy().T + enc.proj.bias.detach().numpy()
    rel = np.abs(got - want).max() / max(np.abs(want).max(), 1e-12)
    assert rel < 1e-5


def test_dynamic_rejects_nonfinite_and_short_input():
    enc = _seeded(DynamicEncoder(4, 4))
    bad = torch.zeros(5, 4, dtype=torch.float64)
    bad[2, 1] = float("nan")
    with pytest.raises(ValueError):
        enc(bad)
    with pytest.raises(ValueError):
        enc(torch.zeros(2, 4, dtype=torch.float64))


def test_static_zero_input_zero_bias():
    enc = _seeded(StaticEncoder(6, 4))
    with torch.no_grad():
        enc.proj.bias.zero_()
        enc.gate.bias.zero_()
    out = enc(torch.zeros(5, 6, dtype=torch.float64))
    assert torch.equal(out, torch.zeros(5, 4, dtype=torch.float64))


def test_static_causality():
    enc = _seeded(StaticEncoder(6, 4), seed=2)
    x = torch.randn(8, 6, dtype=torch.float64)
    base = enc(x)
    bumped = x.clone()
    bumped[5] += 10.0
    out = enc(bumped)
    assert torch.equal(out[:5], base[:5])
    assert not torch.equal(out[5:], base[5:])


def test_static_gate_zero_reduces_to_projection():
    enc = _seeded(StaticEncoder(6, 4), seed=4)
    with torch.no_grad():
        enc.gate.weight.zero_()
        enc.gate.bias.zero_()
    x = torch.randn(7, 6, dtype=torch.float64)
    want = x @ enc.proj.weight.detach().t() + enc.proj.bias.detach()
    assert torch.allclose(enc(x), want, atol=1e-12)


def test_text_single_token_is_projected_embedding():
    enc = _seeded(TextEncoder(5, 3), seed=5)
    table = torch.randn(10, 5, dtype=torch.float64)
    out = enc([[4]], table)
    want = table[4] @ enc.proj.weight.detach().t() + enc.proj.bias.detach()
    assert torch.allclose(out[0], want, atol=1e-12)


def test_text_duplicated_tokens_match_single_copy():
    enc = _seeded(TextEncoder(5, 3), seed=6)
    table = torch.randn(10, 5, dtype=torch.float64)
    assert torch.allclose(enc([[2, 7]], table), enc([[2, 7, 2, 7]], table), atol=1e-12)


def test_text_orthogonal_queries_match_matrix_oracle():
    enc = _seeded(TextEncoder(4, 4), seed=7)
    table = torch.eye(4, dtype=torch.float64)  # orthogonal embeddings
    out = enc([[0], [1]], table).detach().numpy()
    weight = enc.proj.weight.detach().numpy()
    bias = enc.proj.bias.detach().numpy()
    want0 = weight[:, 0] + bias
    want1 = weight[:, 1] + bias
    got = oracles.cosine(out[0], out[1])
    want = oracles.cosine(want0, want1)
    assert abs(got - want) < 1e-7


def test_text_rejects_empty_and_out_of_vocab():
    enc = _seeded(TextEncoder(5, 3))
    table = torch.randn(10, 5, dtype=torch.float64)
    with pytest.raises(ValueError):
        enc([[]], table)
    with pytest.raises(ValueError):
        enc([[10]], table)
    with pytest.raises(ValueError):
        enc([[-1]], table)


def test_text_no_queries_gives_empty_output():
    enc = _seeded(TextEncoder(5, 3))
    table = torch.randn(10, 5, dtype=torch.float64)
    assert enc([], table).shape == (0, 3)


def test_encoder_gradients(rng):
    dyn = _seeded(DynamicEncoder(5, 4), seed=8)
    sta = _seeded(StaticEncoder(5, 4), seed=9)
    txt = _seeded(TextEncoder(5, 4), seed=10)
    x = torch.randn(6, 5, dtype=torch.float64, requires_grad=True)
    table = torch.randn(8, 5, dtype=torch.float64, requires_grad=True)
    tokens = [[1, 3], [0], [5, 7, 2]]
    probe = torch.randn(6, 4, dtype=torch.float64)
    qprobe = torch.randn(3, 4, dtype=torch.float64)

    def loss_dyn():
        return (dyn(x) * probe).sum() + (dyn(x) ** 2).sum() * 0.1

    def loss_sta():
        return (sta(x) * probe).sum() + (sta(x) ** 2).sum() * 0.1

    def loss_txt():
        return (txt(tokens, table) * qprobe).sum()

    finite_difference_check(loss_dyn, [x, *dyn.parameters()], rng, samples_per_block=6)
    finite_difference_check(loss_sta, [x, *sta.parameters()], rng, samples_per_block=6)
    finite_difference_check(loss_txt, [table, *txt.parameters()], rng, samples_per_block=6)


def test_shape_property_sample():
    properties.prop_encoder_shapes(30, 12)
