"""Grounding metrics: recall at rank h under IoU thresholds, plus mean IoU.

Recall R@h,IoU@u is the percentage of queries whose top-h predictions
include at least one moment with IoU >= u against the ground truth (ties at
exactly u count as hits). mIoU averages the top-1 IoU. All overlap is
measured in seconds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .data import Moment, iou

logger = logging.getLogger(__name__)

RANKS = (1, 5)
THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class MetricReport:
    recall: dict  # (rank, threshold) -> percentage
    miou: float
    num_queries: int

    def __post_init__(self) -> None:
        ranks = sorted({h for h, _ in self.recall})
        thresholds = sorted({u for _, u in self.recall})
        for u in thresholds:
            values = [self.recall[(h, u)] for h in ranks]
            if any(a > b + 1e-9 for a, b in zip(values, values[1:])):
                raise AssertionError(f"recall not monotone in rank at IoU@{u}")
        for h in ranks:
            values = [self.recall[(h, u)] for u in thresholds]
            if any(a < b - 1e-9 for a, b in zip(values, values[1:])):
                raise AssertionError(f"recall not monotone in threshold at R@{h}")


def compute_metrics(predictions: Mapping[str, Sequence[Moment]],
                    ground_truth: Mapping[str, Moment],
                    ranks: Sequence[int] = RANKS,
                    thresholds: Sequence[float] = THRESHOLDS) -> MetricReport:
    """Score ranked per-query predictions against ground-truth moments.

    A query with no predictions counts as a miss with top-1 IoU 0.
    """
    num_queries = len(ground_truth)
    if num_queries == 0:
        raise ValueError("ground truth is empty")
    hits = {(h, u): 0 for h in ranks for u in thresholds}
    top1 = []
    for query_id in ground_truth:
        gt = ground_truth[query_id]
        preds = list(predictions.get(query_id, ()))
        if not preds:
            logger.warning("query %s has no predictions; counted as a miss", query_id)
        overlaps = [iou(p, gt) for p in preds]
        top1.append(overlaps[0] if overlaps else 0.0)
        for h in ranks:
            best = max(overlaps[:h], default=0.0)
            for u in thresholds:
                if best >= u:
                    hits[(h, u)] += 1
    recall = {key: 100.0 * count / num_queries for key, count in hits.items()}
    # fsum: exactly rounded, so query order cannot perturb the mean
    return MetricReport(recall=recall, miou=100.0 * math.fsum(top1) / num_queries,
                        num_queries=num_queries)


def report_rows(report: MetricReport) -> list[tuple[str, float]]:
    rows = [
        (f"R@{h}, IoU@{u}", report.recall[(h, u)])
        for h in sorted({h for h, _ in report.recall})
        for u in sorted({u for _, u in report.recall})
    ]
    rows.append(("mIoU", report.miou))
    return rows


def render_csv(report: MetricReport) -> str:
    lines = ["metric,value"]
    for name, value in report_rows(report):
        lines.append(f"{name},{value!r}")
    lines.append(f"queries,{report.num_queries}")
    return "\n".join(lines) + "\n"


def render_table(report: MetricReport) -> str:
    width = max(len(name) for name, _ in report_rows(report))
    lines = [f"{'metric'.ljust(width)}  value"]
    lines.append("-" * (width + 8))
    for name, value in report_rows(report):
        lines.append(f"{name.ljust(width)}  {value:6.2f}")
    lines.append(f"{'queries'.ljust(width)}  {report.num_queries:6d}")
    return "\n".join(lines) + "\n"
