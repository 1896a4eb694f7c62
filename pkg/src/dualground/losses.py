"""Training objectives: stream alignment, IoU regression, query-proposal
contrast, and the weighted composite.

All losses are non-negative scalars. The composite weights the query-clip
contrast, the coarse and fine position alignment terms, and per-stream
(IoU regression + contrast) pairs; the trainer decides which granularity's
regression/contrast terms are active in a given epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor
from torch.nn import functional as F

from .proposals import ScoreMap

_PROB_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    query_clip: float = 1.0
    align_coarse: float = 1.0
    align_fine: float = 0.0
    dynamic: float = 0.6
    static: float = 0.4
    tau_align: float = 0.1
    tau_contrast: float = 1.0

    def __post_init__(self) -> None:
        for name in ("query_clip", "align_coarse", "align_fine", "dynamic", "static"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")
        if self.tau_align <= 0 or self.tau_contrast <= 0:
            raise ValueError("temperatures must be strictly positive")


def position_alignment_loss(dyn: Tensor, sta: Tensor, tau: float) -> Tensor:
    """Cross-entropy of same-position cosine over all positions, per row.

    For each position t the logits are cos(dyn_t, sta_t') / tau over t',
    with target t' = t; averaged over the T positions. T == 1 is a single
    class and contributes zero.
    """
    if dyn.shape != sta.shape:
        raise ValueError("streams must have identical shapes")
    num_pos = dyn.shape[0]
    if num_pos <= 1:
        return dyn.new_zeros(())
    logits = (F.normalize(dyn, dim=1) @ F.normalize(sta, dim=1).t()) / tau
    target = torch.arange(num_pos, device=dyn.device)
    return F.cross_entropy(logits, target)


def rescale_targets(targets: Tensor, low: float, high: float) -> Tensor:
    """Optional linear rescale of IoU targets: (t - low) / (high - low), clamped."""
    if not low < high:
        raise ValueError("rescale bounds must satisfy low < high")
    return ((targets - low) / (high - low)).clamp(0.0, 1.0)


def iou_regression_loss(scores: Tensor, targets: Tensor) -> Tensor:
    """Soft-target binary cross-entropy between mapped scores and IoU targets.

    Raw cosine scores are mapped through (s + 1) / 2 and clamped away from
    {0, 1} before the log terms. Targets must already lie in [0, 1].
    """
    if scores.shape != targets.shape:
        raise ValueError("scores and targets must have identical shapes")
    if targets.numel() == 0:
        return scores.sum() * 0.0  # no cells under consideration
    if targets.min() < 0 or targets.max() > 1:
        raise ValueError("IoU targets must lie in [0, 1]")
    y = ((scores + 1.0) / 2.0).clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    t = targets.to(y.dtype)
    return -(t * torch.log(y) + (1.0 - t) * torch.log1p(-y)).mean()


def query_proposal_contrastive_terms(smap: ScoreMap, gt_cells: Tensor,
                                     tau: float) -> tuple[Tensor, Tensor]:
    """The two conditional matching terms of the proposal contrast.

    First: for each query, -log softmax over that query's valid cells at its
    ground-truth cell. Second: for each ground-truth cell, -log softmax over
    the video's queries at that cell. Both are sums over the video's queries.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    valid = smap.valid_scores()  # (N, M)
    num_queries = valid.shape[0]
    if gt_cells.numel() != num_queries:
        raise ValueError("need one ground-truth cell per query")
    rows = torch.arange(num_queries, device=valid.device)
    log_p_cell = F.log_softmax(valid / tau, dim=1)
    proposal_given_query = -log_p_cell[rows, gt_cells].sum()
    at_gt = valid[:, gt_cells]  # (N queries, N gt cells)
    log_p_query = F.log_softmax(at_gt / tau, dim=0)
    query_given_proposal = -log_p_query[rows, rows].sum()
    return proposal_given_query, query_given_proposal


def query_proposal_contrastive_loss(smap: ScoreMap, gt_cells: Tensor,
                                    tau: float) -> Tensor:
    a, b = query_proposal_contrastive_terms(smap, gt_cells, tau)
    return a + b


@dataclass
class LossComponents:
    """Branch-selected components entering the composite for one step."""

    query_clip: Tensor
    align_coarse: Tensor
    align_fine: Tensor
    iou_dyn: Tensor
    iou_sta: Tensor
    contrast_dyn: Tensor
    contrast_sta: Tensor
    branch: str = "fine"

    def detached(self) -> dict:
        out = {}
        for name in ("query_clip", "align_coarse", "align_fine", "iou_dyn",
                     "iou_sta", "contrast_dyn", "contrast_sta"):
            value = getattr(self, name)
            out[name] = float(value.detach()) if isinstance(value, Tensor) else float(value)
        return out


def total_loss(parts: LossComponents, weights: LossWeights) -> Tensor:
    return (
        weights.query_clip * parts.query_clip
        + weights.align_coarse * parts.align_coarse
        + weights.align_fine * parts.align_fine
        + weights.dynamic * (parts.iou_dyn + parts.contrast_dyn)
        + weights.static * (parts.iou_sta + parts.contrast_sta)
    )


def blend_scores(dyn: Optional[Tensor], sta: Optional[Tensor],
                 weights: LossWeights) -> Tensor:
    """Stream-blended score grid used for ranking and evaluation.

    Weighted by the per-stream loss coefficients so a single-stream
    configuration ranks with that stream alone; falls back to the plain
    mean when both coefficients are zero.
    """
    if dyn is None or sta is None:
        raise ValueError("both stream score grids are required")
    denom = weights.dynamic + weights.static
    if denom <= 0:
        return (dyn + sta) / 2.0
    return (weights.dynamic * dyn + weights.static * sta) / denom
