import logging
import math

import numpy as np
import pytest
import torch

import oracles
import properties
from gradcheck import finite_difference_check
from dualground.data import ClipSpan
from dualground.graphs import (BilinearDiscriminator, TemporalGraph, build_graph,
                               graph_forward, query_clip_contrastive_loss, rbf)


def _disc(dim, seed=0):
    d = BilinearDiscriminator(dim)
    d.reset_parameters(torch.Generator().manual_seed(seed))
    return d


def test_contrast_zero_discriminator_closed_form():
    disc = _disc(4)
    with torch.no_grad():
        disc.weight.zero_()
    queries = torch.randn(3, 4, dtype=torch.float64)
    clips = torch.randn(6, 4, dtype=torch.float64)
    spans = [ClipSpan(1, 2), ClipSpan(3, 3), ClipSpan(2, 5)]
    loss = query_clip_contrastive_loss(queries, clips, spans, disc)
    assert abs(loss.item() - 2.0 * math.log(2.0)) < 1e-12


def test_contrast_saturated_discriminator():
    disc = _disc(1)
    with torch.no_grad():
        disc.weight.fill_(1.0)
    queries = torch.tensor([[10.0]], dtype=torch.float64)
    clips = torch.tensor([[1.0], [-1.0]], dtype=torch.float64)
    loss = query_clip_contrastive_loss(queries, clips, [ClipSpan(1, 1)], disc)
    assert abs(loss.item() - 2.0 * oracles.softplus(-10.0)) < 1e-12


def test_contrast_matches_expanded_oracle(rng):
    for trial in range(100):
        disc = _disc(3, seed=trial)
        queries = torch.as_tensor(rng.normal(size=(2, 3)))
        clips = torch.as_tensor(rng.normal(size=(4, 3)))
        starts = rng.integers(1, 5, size=2)
        spans = [ClipSpan(int(s), int(rng.integers(s, 5))) for s in starts]
        got = query_clip_contrastive_loss(queries, clips, spans, disc).item()
        want = oracles.query_clip_loss(queries.numpy(), disc.weight.detach().numpy(),
                                       clips.numpy(),
                                       [(s.start_clip, s.end_clip) for s in spans])
        assert abs(got - want) < 1e-8


def test_contrast_sum_reduction_scales_terms():
    disc = _disc(3, seed=1)
    queries = torch.randn(1, 3, dtype=torch.float64)
    clips = torch.randn(6, 3, dtype=torch.float64)
    span = [ClipSpan(2, 4)]  # 3 positives, 3 negatives
    mean_loss = query_clip_contrastive_loss(queries, clips, span, disc).item()
    sum_loss = query_clip_contrastive_loss(queries, clips, span, disc,
                                           reduction="sum").item()
    assert sum_loss > mean_loss
    with pytest.raises(ValueError):
        query_clip_contrastive_loss(queries, clips, span, disc, reduction="max")


def test_contrast_whole_video_span_warns(caplog):
    disc = _disc(3)
    queries = torch.randn(1, 3, dtype=torch.float64)
    clips = torch.randn(4, 3, dtype=torch.float64)
    with caplog.at_level(logging.WARNING):
        loss = query_clip_contrastive_loss(queries, clips, [ClipSpan(1, 4)], disc)
    assert "no negatives" in caplog.text
    assert torch.isfinite(loss)


def test_build_graph_keeps_everything_when_budget_allows():
    feats = torch.randn(3, 5, dtype=torch.float64)
    g = build_graph(feats, 3, 2.0)
    assert sorted(zip(g.src.tolist(), g.dst.tolist())) == [(0, 1), (0, 2), (1, 2)]


def test_build_graph_unique_maximum():
    feats = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    g = build_graph(feats, 1, 2.0)
    assert (g.src.tolist(), g.dst.tolist()) == ([0], [1])
    assert abs(float(g.cosine[0]) - 1.0) < 1e-12


def test_build_graph_matches_exhaustive_oracle(rng):
    for _ in range(100):
        count = int(rng.integers(2, 9))
        feats = torch.as_tensor(rng.normal(size=(count, 5)))
        budget = int(rng.integers(1, 30))
        g = build_graph(feats, budget, 2.0)
        got = sorted(zip(g.src.tolist(), g.dst.tolist()))
        want = oracles.top_k_edges(feats.numpy(), budget)
        assert got == want


def test_build_graph_zero_row_scores_zero_cosine():
    feats = torch.tensor([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], dtype=torch.float64)
    g = build_graph(feats, 3, 2.0)
    pair_cos = dict(zip(zip(g.src.tolist(), g.dst.tolist()), g.cosine.tolist()))
    assert pair_cos[(0, 1)] == 0.0 and pair_cos[(0, 2)] == 0.0


def test_rbf_weight_values():
    assert rbf(0, 2.0) == 1.0
    assert abs(rbf(2, 2.0) - math.exp(-0.5)) < 1e-15
    with pytest.raises(ValueError):
        rbf(1, 0.0)


def test_graph_forward_zero_layers_identity():
    feats = torch.randn(5, 3, dtype=torch.float64)
    out = graph_forward(feats, num_edges=4, num_layers=0, sigma=2.0)
    assert torch.equal(out, feats)


def test_graph_forward_two_node_closed_form():
    feats = torch.tensor([[1.0, 2.0], [3.0, 0.5]], dtype=torch.float64)
    sigma = 1.5
    out = graph_forward(feats, num_edges=1, num_layers=1, sigma=sigma)
    w = rbf(1, sigma)
    assert torch.allclose(out[0], feats[0], atol=1e-15)
    assert torch.allclose(out[1], feats[1] + w * feats[0], atol=1e-12)


def test_graph_forward_matches_dense_oracle(rng):
    for _ in range(50):
        count = 6
        feats = torch.as_tensor(rng.normal(size=(count, 4)))
        budget = int(rng.integers(1, 16))
        got = graph_forward(feats, num_edges=budget, num_layers=2, sigma=1.5).numpy()
        want = oracles.graph_message_passing(feats.numpy(), budget, 2, 1.5)
        assert np.abs(got - want).max() < 1e-6


def test_isolated_node_fed_by_self_loop():
    # node 0 never receives; with ReLU-active inputs it passes through
    feats = torch.tensor([[0.5, 0.5], [0.2, 0.1], [0.1, 0.3]], dtype=torch.float64)
    out = graph_forward(feats, num_edges=3, num_layers=1, sigma=2.0)
    assert torch.allclose(out[0], feats[0], atol=1e-15)


def test_temporal_graph_rejects_backward_edges():
    with pytest.raises(ValueError):
        TemporalGraph(3, torch.tensor([2]), torch.tensor([1]),
                      torch.tensor([0.5]), torch.tensor([0.5]))


def test_graph_forward_frozen_edges_gradients(rng):
    feats = torch.randn(6, 4, dtype=torch.float64, requires_grad=True)
    frozen = [build_graph(feats.detach() + 0.1 * layer, 8, 2.0) for layer in range(2)]
    probe = torch.randn(6, 4, dtype=torch.float64)

    def loss():
        out = graph_forward(feats, num_edges=8, num_layers=2, sigma=2.0,
                            frozen_graphs=frozen)
        return (out * probe).sum() + (out ** 2).sum() * 0.05

    finite_difference_check(loss, [feats], rng, samples_per_block=12)


def test_contrast_gradients(rng):
    disc = _disc(4, seed=11)
    queries = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    clips = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)
    spans = [ClipSpan(1, 2), ClipSpan(4, 5)]

    def loss():
        return query_clip_contrastive_loss(queries, clips, spans, disc)

    finite_difference_check(loss, [queries, clips, disc.weight], rng, samples_per_block=8)


def test_graph_property_samples():
    properties.prop_graph_temporal_order(50, 20)
    properties.prop_graph_edge_budget(50, 21)
    properties.prop_graph_weight_shift_equivariance(50, 22)
    properties.prop_graph_rescale_invariance(50, 23)
