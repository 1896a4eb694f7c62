"""2D proposal maps, coarse aggregation, cosine scoring, and ranking.

A proposal map is an L x L grid where cell (j, k), j <= k (0-based here,
1-based in ClipSpan), represents the candidate moment spanning clips j..k.
Lower-triangular cells are invalid: they are held at exactly zero, masked
out of every conv input, and excluded from losses and ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .data import ClipSpan, iou
from .encoders import _init_linear


@dataclass
class ProposalMap:
    features: Tensor  # (L, L, D); invalid cells exactly zero
    mask: Tensor  # (L, L) bool, upper triangular

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass
class ScoreMap:
    scores: Tensor  # (N, L, L) in [-1, 1]; invalid cells stored as 0
    mask: Tensor  # (L, L) bool

    @property
    def num_queries(self) -> int:
        return self.scores.shape[0]

    @property
    def size(self) -> int:
        return self.scores.shape[1]

    def valid_scores(self) -> Tensor:
        # (N, M) row-major over valid cells
        return self.scores[:, self.mask]


def valid_mask(size: int, device=None) -> Tensor:
    return torch.ones(size, size, dtype=torch.bool, device=device).triu()


def aggregate_coarse(feats: Tensor, window: int) -> Tensor:
    """Element-wise max over non-overlapping windows of `window` clips."""
    num_clips, dim = feats.shape
    if window < 1:
        raise ValueError("window must be >= 1")
    if num_clips % window != 0:
        raise ValueError(f"window {window} does not divide clip count {num_clips}")
    return feats.reshape(num_clips // window, window, dim).max(dim=1).values


def initial_proposal_map(feats: Tensor) -> Tensor:
    """Pre-conv map: cell (i, j) = max(f_i..f_j) + f_i + f_j, lower triangle zero."""
    size, dim = feats.shape
    rows = []
    for i in range(size):
        seg = feats[i:]
        running = torch.cummax(seg, dim=0).values
        cells = running + feats[i].unsqueeze(0) + seg
        if i:
            cells = torch.cat([feats.new_zeros(i, dim), cells])
        rows.append(cells)
    return torch.stack(rows)


class ProposalConv(nn.Module):
    """Two masked 3x3 convs refining a proposal grid at one granularity."""

    def __init__(self, dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1, dtype=dtype)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1, dtype=dtype)

    def reset_parameters(self, gen: torch.Generator) -> None:
        _init_linear(self.conv1, gen)
        _init_linear(self.conv2, gen)

    def forward(self, grid: Tensor, mask: Tensor) -> Tensor:
        # grid: (L, L, D) -> (L, L, D); invalid cells zeroed before and after
        # each conv so their contents never reach a valid cell.
        m = mask.to(grid.dtype)
        x = (grid * m.unsqueeze(-1)).permute(2, 0, 1).unsqueeze(0)
        m4 = m.unsqueeze(0).unsqueeze(0)
        x = torch.relu(self.conv1(x)) * m4
        x = self.conv2(x) * m4
        return x.squeeze(0).permute(1, 2, 0)


def build_map(feats: Tensor, conv: ProposalConv) -> ProposalMap:
    """Construct and refine the 2D proposal map for one stream/granularity."""
    mask = valid_mask(feats.shape[0], device=feats.device)
    return ProposalMap(conv(initial_proposal_map(feats), mask), mask)


def score_map(pmap: ProposalMap, queries: Tensor) -> ScoreMap:
    """Cosine similarity between every valid proposal cell and every query.

    Zero-norm vectors normalize to zero, scoring 0 against everything.
    """
    size, dim = pmap.size, pmap.features.shape[-1]
    cells = F.normalize(pmap.features.reshape(size * size, dim), dim=1)
    qn = F.normalize(queries, dim=1)
    scores = (qn @ cells.t()).reshape(-1, size, size)
    scores = scores * pmap.mask.to(scores.dtype)
    return ScoreMap(scores, pmap.mask)


def rank_proposals(smap: ScoreMap, query_index: int, top_h: int,
                   nms_iou: float) -> list[tuple[ClipSpan, float]]:
    """Descending-score traversal with greedy overlap suppression.

    Candidates with clip-span IoU strictly above `nms_iou` against any kept
    span are dropped. Ties break toward the earlier start, then the shorter
    span. Returns at most `top_h` entries.
    """
    if top_h < 1:
        raise ValueError("top_h must be >= 1")
    grid = smap.scores[query_index]
    size = smap.size
    cand = []
    for j in range(size):
        for k in range(j, size):
            span = ClipSpan(j + 1, k + 1)
            cand.append((-float(grid[j, k]), span.start_clip, span.num_clips, span))
    cand.sort(key=lambda item: item[:3])
    kept: list[tuple[ClipSpan, float]] = []
    for neg_score, _, _, span in cand:
        if any(iou(span, other) > nms_iou for other, _ in kept):
            continue
        kept.append((span, -neg_score))
        if len(kept) == top_h:
            break
    return kept


def iou_target_grid(mask: Tensor, gt_span: ClipSpan) -> Tensor:
    """Per valid cell, IoU of the cell's span against the ground-truth span."""
    size = mask.shape[0]
    if gt_span.end_clip > size:
        raise ValueError(f"ground-truth span {gt_span} exceeds grid size {size}")
    out = torch.zeros(size, size, dtype=torch.float64)
    for j in range(size):
        for k in range(j, size):
            out[j, k] = iou(ClipSpan(j + 1, k + 1), gt_span)
    return out[mask]


def gt_cell_index(mask: Tensor, gt_span: ClipSpan) -> int:
    """Flat index of the ground-truth cell within the row-major valid ordering."""
    size = mask.shape[0]
    index_map = torch.full((size, size), -1, dtype=torch.long)
    index_map[mask] = torch.arange(int(mask.sum()))
    idx = int(index_map[gt_span.start_clip - 1, gt_span.end_clip - 1])
    if idx < 0:
        raise ValueError(f"span {gt_span} is not a valid cell")
    return idx


def spans_of_valid_cells(size: int) -> list[ClipSpan]:
    """Spans in the same row-major order used to flatten valid cells."""
    return [ClipSpan(j + 1, k + 1) for j in range(size) for k in range(j, size)]
