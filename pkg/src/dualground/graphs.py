"""Temporal graphs over clip features and the query-clip contrastive loss.

Graph construction considers every forward pair (i, j) with i < j, ranks
pairs by cosine similarity of the current node features, and keeps the
global top-K edges. Edge weights are a Gaussian radial basis function of
the temporal distance j - i, so the weight depends only on the offset.
Message passing aggregates in-neighbors plus a unit self-loop and applies
ReLU. Edge selection is discrete: features are detached for ranking and
the edge set is constant within a forward pass (rebuilt per layer by
default, which is the adaptive reading).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .data import ClipSpan

logger = logging.getLogger(__name__)


@dataclass
class TemporalGraph:
    num_nodes: int
    src: Tensor  # (E,) long, always < dst
    dst: Tensor  # (E,) long
    cosine: Tensor  # (E,) similarity used for ranking
    weight: Tensor  # (E,) rbf(dst - src)

    def __post_init__(self) -> None:
        if self.src.numel() and not bool((self.src < self.dst).all()):
            raise ValueError("temporal graph edges must run forward in time")

    @property
    def num_edges(self) -> int:
        return int(self.src.numel())


def rbf(distance, sigma: float):
    """Gaussian kernel of temporal distance; rbf(0) == 1."""
    if sigma <= 0:
        raise ValueError("rbf sigma must be positive")
    if isinstance(distance, Tensor):
        d = distance.to(torch.float64)
        return torch.exp(-(d * d) / (2.0 * sigma * sigma))
    return math.exp(-(distance * distance) / (2.0 * sigma * sigma))


def cosine_matrix(feats: Tensor) -> Tensor:
    """Pairwise cosine similarity; all-zero rows score 0 against everything."""
    norms = feats.norm(dim=1, keepdim=True)
    unit = feats / norms.clamp_min(1e-300)
    return unit @ unit.t()


def build_graph(feats: Tensor, num_edges: int, sigma: float) -> TemporalGraph:
    """Top-K forward edges by cosine similarity.

    Ties break toward the smaller temporal distance, then the smaller source
    index. Kept edges are stored sorted by (src, dst) for stable output.
    """
    num_nodes = feats.shape[0]
    if num_nodes < 2:
        raise ValueError("graph needs at least 2 nodes")
    if num_edges < 1:
        raise ValueError("edge budget must be >= 1")
    with torch.no_grad():
        cos = cosine_matrix(feats)
        pairs = torch.triu_indices(num_nodes, num_nodes, offset=1)
        src_all, dst_all = pairs[0], pairs[1]
        sims = cos[src_all, dst_all]

        sims_np = sims.cpu().numpy().astype(np.float64)
        dist_np = (dst_all - src_all).cpu().numpy()
        src_np = src_all.cpu().numpy()
        # lexsort: last key is primary -> similarity desc, distance asc, src asc
        order = np.lexsort((src_np, dist_np, -sims_np))
        keep = order[: min(num_edges, order.size)]
        keep = keep[np.lexsort((dst_all.cpu().numpy()[keep], src_np[keep]))]

        keep_t = torch.as_tensor(keep, dtype=torch.long)
        src = src_all[keep_t]
        dst = dst_all[keep_t]
        weight = rbf(dst - src, sigma).to(feats.dtype)
        return TemporalGraph(num_nodes, src, dst, sims[keep_t].clone(), weight)


def propagate(feats: Tensor, graph: TemporalGraph) -> Tensor:
    """One message-passing layer: ReLU(weighted in-neighbors + self)."""
    msg = torch.zeros_like(feats)
    if graph.num_edges:
        contrib = feats[graph.src] * graph.weight.to(feats.dtype).unsqueeze(1)
        msg = msg.index_add(0, graph.dst, contrib)
    return torch.relu(msg + feats)


def graph_forward(feats: Tensor, num_edges: int, num_layers: int, sigma: float,
                  rebuild_each_layer: bool = True,
                  frozen_graphs: Optional[Sequence[TemporalGraph]] = None) -> Tensor:
    """Run `num_layers` rounds of graph construction + propagation.

    With `frozen_graphs` the provided edge sets are used verbatim (one per
    layer), which keeps the forward differentiable end to end for gradient
    checking; otherwise edges come from the detached current features.
    """
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    if frozen_graphs is not None and len(frozen_graphs) != num_layers:
        raise ValueError("need one frozen graph per layer")
    h = feats
    graph: Optional[TemporalGraph] = None
    for layer in range(num_layers):
        if frozen_graphs is not None:
            graph = frozen_graphs[layer]
        elif rebuild_each_layer or graph is None:
            graph = build_graph(h.detach(), num_edges, sigma)
        h = propagate(h, graph)
    return h


class BilinearDiscriminator(nn.Module):
    """Scalar relevance score q^T W f for every query-clip pair."""

    def __init__(self, dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dim, dim, dtype=dtype))
        bound = 1.0 / math.sqrt(dim)
        with torch.no_grad():
            self.weight.uniform_(-bound, bound)

    def reset_parameters(self, gen: torch.Generator) -> None:
        bound = 1.0 / math.sqrt(self.weight.shape[0])
        with torch.no_grad():
            self.weight.uniform_(-bound, bound, generator=gen)

    def forward(self, queries: Tensor, clips: Tensor) -> Tensor:
        # (N, D), (T, D) -> (N, T)
        return queries @ self.weight @ clips.t()


def query_clip_contrastive_loss(queries: Tensor, clips: Tensor,
                                positive_spans: Sequence[ClipSpan],
                                discriminator: BilinearDiscriminator,
                                reduction: str = "mean") -> Tensor:
    """Softplus contrast between in-span and out-of-span clips per query.

    Positives are the clips inside each query's span; the rest of the video
    is negative. `reduction` picks how the per-clip terms pool within the
    positive/negative sets (arithmetic mean by default, or plain sum). A
    span covering the whole video leaves no negatives, and that query's
    negative term contributes zero (logged once per call). Perfect
    discrimination drives the value toward 0 from above.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError("reduction must be 'mean' or 'sum'")
    num_queries, num_clips = queries.shape[0], clips.shape[0]
    if len(positive_spans) != num_queries:
        raise ValueError("need one positive span per query")
    if num_queries == 0:
        return clips.new_zeros(())
    pool = torch.mean if reduction == "mean" else torch.sum
    scores = discriminator(queries, clips)  # (N, T)
    terms = []
    for i, span in enumerate(positive_spans):
        if span.end_clip > num_clips:
            raise ValueError(f"span {span} exceeds clip count {num_clips}")
        lo, hi = span.start_clip - 1, span.end_clip
        pos = pool(F.softplus(-scores[i, lo:hi]))
        if lo == 0 and hi == num_clips:
            logger.warning("query %d span covers the whole video; no negatives", i)
            neg = scores.new_zeros(())
        else:
            neg_scores = torch.cat([scores[i, :lo], scores[i, hi:]])
            neg = pool(F.softplus(neg_scores))
        terms.append(pos + neg)
    return torch.stack(terms).mean()
