"""Optimization loop, branch schedule, checkpointing, and the inference path.

Training alternates the granularity supervised by the IoU-regression and
proposal-contrast terms (coarse blocks first), while the query-clip and
coarse alignment terms stay active every epoch by default. Checkpoints are
retained as `last` plus `best` by training-set mIoU. Everything is
deterministic for a fixed config + seed.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import torch
from torch import Tensor

from . import evaluation
from .blobio import Corpus, load_checkpoint, save_checkpoint
from .data import (ClipSpan, GranularityConfig, Moment, VideoRecord, clip_span_to_moment,
                   contained_clip_span, fine_to_coarse, moment_to_clip_span)
from .graphs import query_clip_contrastive_loss
from .losses import (LossComponents, LossWeights, blend_scores, iou_regression_loss,
                     position_alignment_loss, query_proposal_contrastive_loss,
                     rescale_targets, total_loss)
from .model import GroundingNetwork, ModelConfig, model_from_checkpoint
from .proposals import ScoreMap, gt_cell_index, iou_target_grid, rank_proposals

LOSS_LOG_COLUMNS = ("epoch", "branch", "query_clip", "align_coarse", "align_fine",
                    "iou_dyn", "iou_sta", "contrast_dyn", "contrast_sta", "total")

_WEIGHT_KEYS = {
    "lambda_query_clip": "query_clip",
    "lambda_align_coarse": "align_coarse",
    "lambda_align_fine": "align_fine",
    "lambda_dynamic": "dynamic",
    "lambda_static": "static",
    "tau_align": "tau_align",
    "tau_contrast": "tau_contrast",
}


@dataclass(frozen=True)
class BranchSchedule:
    """Coarse/fine supervision schedule over 0-based epochs."""

    period: int = 10
    mode: str = "alternate"  # alternate | fine_only | coarse_only

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ValueError("schedule period must be >= 1")
        if self.mode not in ("alternate", "fine_only", "coarse_only"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")

    def branch(self, epoch: int) -> str:
        if self.mode == "fine_only":
            return "fine"
        if self.mode == "coarse_only":
            return "coarse"
        return "coarse" if (epoch // self.period) % 2 == 0 else "fine"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 7
    branch_period: int = 10
    branch_mode: str = "alternate"
    hidden_dim: int = 32
    conv_kernel: int = 3
    mlp_mult: int = 4
    window: int = 2
    graph_layers: int = 2
    graph_edges: int = 60
    rbf_sigma: float = 2.0
    top_h: int = 5
    nms_iou: float = 0.5
    literal_residual_norm: bool = True
    rebuild_graph_each_layer: bool = True
    query_clip_all_epochs: bool = True
    query_clip_reduction: str = "mean"
    align_all_epochs: bool = True
    iou_rescale_low: Optional[float] = None  # both set -> linear target rescale
    iou_rescale_high: Optional[float] = None
    eval_every: int = 1
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_flat_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "weights"}
        for flat_key, attr in _WEIGHT_KEYS.items():
            out[flat_key] = getattr(self.weights, attr)
        return out

    @classmethod
    def from_flat_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        weight_kwargs = {}
        for flat_key, attr in _WEIGHT_KEYS.items():
            if flat_key in raw:
                weight_kwargs[attr] = raw.pop(flat_key)
        known = set(cls.__dataclass_fields__) - {"weights"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(weights=LossWeights(**weight_kwargs), **raw)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "TrainConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a flat JSON object")
        return cls.from_flat_dict(raw)

    def model_config(self, raw_dim: int, embed_dim: int) -> ModelConfig:
        return ModelConfig(
            raw_dim=raw_dim,
            embed_dim=embed_dim,
            hidden_dim=self.hidden_dim,
            conv_kernel=self.conv_kernel,
            mlp_mult=self.mlp_mult,
            window=self.window,
            graph_layers=self.graph_layers,
            graph_edges=self.graph_edges,
            rbf_sigma=self.rbf_sigma,
            literal_residual_norm=self.literal_residual_norm,
            rebuild_graph_each_layer=self.rebuild_graph_each_layer,
        )


@dataclass
class VideoTensors:
    """Per-video tensors and targets precomputed once before training."""

    video: VideoRecord
    dyn_raw: Tensor
    sta_raw: Tensor
    token_lists: list
    contained_fine: list  # ClipSpan per query (positives for the clip contrast)
    spans: dict  # granularity -> list[ClipSpan] covering spans per query
    targets: dict  # granularity -> (N, M) IoU target matrix
    gt_cells: dict  # granularity -> (N,) long flat indices


def prepare_video(video: VideoRecord, dyn_raw, sta_raw, window: int,
                  dtype: torch.dtype = torch.float64) -> VideoTensors:
    num_clips = video.num_clips
    gran_cfg = GranularityConfig(num_clips, window)
    covering = [moment_to_clip_span(q.moment, video.duration, num_clips)
                for q in video.queries]
    contained = [contained_clip_span(q.moment, video.duration, num_clips)
                 for q in video.queries]
    spans = {
        "fine": covering,
        "coarse": [fine_to_coarse(s, gran_cfg) for s in covering],
    }
    sizes = {"fine": num_clips, "coarse": gran_cfg.coarse_clips}
    targets, gt_cells = {}, {}
    for gran, gran_spans in spans.items():
        size = sizes[gran]
        mask = torch.ones(size, size, dtype=torch.bool).triu()
        grids = [iou_target_grid(mask, s) for s in gran_spans]
        targets[gran] = (torch.stack(grids) if grids
                         else torch.zeros(0, int(mask.sum()), dtype=torch.float64))
        gt_cells[gran] = torch.tensor([gt_cell_index(mask, s) for s in gran_spans],
                                      dtype=torch.long)
    return VideoTensors(
        video=video,
        dyn_raw=torch.as_tensor(dyn_raw, dtype=dtype),
        sta_raw=torch.as_tensor(sta_raw, dtype=dtype),
        token_lists=[list(q.tokens) for q in video.queries],
        contained_fine=contained,
        spans=spans,
        targets=targets,
        gt_cells=gt_cells,
    )


def video_loss_components(model: GroundingNetwork, vt: VideoTensors, branch: str,
                          cfg: TrainConfig) -> LossComponents:
    """Forward one video and assemble the branch-selected loss components."""
    weights = cfg.weights
    fused_dyn, fused_sta, fused_qry = model.encode_fuse(vt.dyn_raw, vt.sta_raw,
                                                        vt.token_lists)
    zero = fused_dyn.new_zeros(())

    query_clip = zero
    if cfg.query_clip_all_epochs or branch == "fine":
        per_stream = [
            query_clip_contrastive_loss(fused_qry, fused, vt.contained_fine,
                                        model.discriminator,
                                        reduction=cfg.query_clip_reduction)
            for fused in (fused_dyn, fused_sta)
        ]
        query_clip = (per_stream[0] + per_stream[1]) / 2.0

    feat_dyn, feat_sta = model.stream_features(fused_dyn, fused_sta)
    coarse_dyn, coarse_sta = model.coarse_features(feat_dyn, feat_sta)

    align_coarse = zero
    if cfg.align_all_epochs or branch == "coarse":
        align_coarse = position_alignment_loss(coarse_dyn, coarse_sta, weights.tau_align)
    align_fine = zero
    if weights.align_fine > 0:
        align_fine = position_alignment_loss(feat_dyn, feat_sta, weights.tau_align)

    feats = {"dyn": feat_dyn if branch == "fine" else coarse_dyn,
             "sta": feat_sta if branch == "fine" else coarse_sta}
    iou_parts, contrast_parts = {}, {}
    for stream in ("dyn", "sta"):
        _, smap = model.proposal_scores(feats[stream], stream, branch, fused_qry)
        targets = vt.targets[branch].to(smap.scores.dtype)
        if cfg.iou_rescale_low is not None and cfg.iou_rescale_high is not None:
            targets = rescale_targets(targets, cfg.iou_rescale_low, cfg.iou_rescale_high)
        iou_parts[stream] = iou_regression_loss(smap.valid_scores(), targets)
        contrast_parts[stream] = query_proposal_contrastive_loss(
            smap, vt.gt_cells[branch], weights.tau_contrast)

    return LossComponents(
        query_clip=query_clip,
        align_coarse=align_coarse,
        align_fine=align_fine,
        iou_dyn=iou_parts["dyn"],
        iou_sta=iou_parts["sta"],
        contrast_dyn=contrast_parts["dyn"],
        contrast_sta=contrast_parts["sta"],
        branch=branch,
    )


@dataclass
class TrainResult:
    out_dir: Path
    loss_log: Path
    last_checkpoint: Path
    best_checkpoint: Path
    history: list
    best_epoch: int
    best_miou: float
    final_miou: float


def train(corpus: Corpus, cfg: TrainConfig, out_dir: Union[str, Path]) -> TrainResult:
    if not corpus.dataset.videos:
        raise ValueError("dataset is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)

    embed_dim = corpus.token_table.shape[1]
    for video in corpus.dataset.videos:
        if video.num_clips % cfg.window != 0:
            raise ValueError(
                f"video {video.video_id}: window {cfg.window} does not divide "
                f"{video.num_clips} clips"
            )
    raw_dim = next(iter(corpus.dynamic.values())).shape[1]
    model = GroundingNetwork(cfg.model_config(raw_dim, embed_dim),
                             corpus.token_table, seed=cfg.seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                                  betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    schedule = BranchSchedule(cfg.branch_period, cfg.branch_mode)

    videos = [prepare_video(v, corpus.dynamic[v.video_id], corpus.static[v.video_id],
                            cfg.window) for v in corpus.dataset.videos]

    loss_log = out / "loss_log.csv"
    history = []
    best_miou, best_epoch = float("-inf"), -1
    last_dir, best_dir = out / "checkpoint_last", out / "checkpoint_best"
    final_miou = float("nan")

    with loss_log.open("w", encoding="utf-8") as log:
        log.write(",".join(LOSS_LOG_COLUMNS) + "\n")
        for epoch in range(cfg.epochs):
            branch = schedule.branch(epoch)
            order = torch.randperm(
                len(videos),
                generator=torch.Generator().manual_seed(cfg.seed * 1_000_003 + epoch),
            ).tolist()
            sums = {name: 0.0 for name in LOSS_LOG_COLUMNS[2:]}
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                optimizer.zero_grad(set_to_none=True)
                batch_total = None
                for idx in batch:
                    parts = video_loss_components(model, videos[idx], branch, cfg)
                    video_total = total_loss(parts, cfg.weights)
                    if not torch.isfinite(video_total):
                        raise RuntimeError(
                            f"non-finite loss at epoch {epoch}, video "
                            f"{videos[idx].video.video_id}: {parts.detached()}"
                        )
                    batch_total = video_total if batch_total is None else batch_total + video_total
                    detached = parts.detached()
                    for name, value in detached.items():
                        sums[name] += value
                    sums["total"] += float(video_total.detach())
                (batch_total / len(batch)).backward()
                optimizer.step()

            means = {name: sums[name] / len(videos) for name in sums}
            row = [str(epoch), branch] + [repr(means[name]) for name in LOSS_LOG_COLUMNS[2:]]
            log.write(",".join(row) + "\n")
            history.append({"epoch": epoch, "branch": branch, **means})

            meta = {"model": model.cfg.to_dict(), "train": cfg.to_flat_dict(),
                    "epoch": epoch, "num_clips": videos[0].video.num_clips}
            save_checkpoint(last_dir, model.state_tensors(), meta)
            if (cfg.eval_every > 0 and corpus.dataset.num_queries > 0
                    and ((epoch + 1) % cfg.eval_every == 0
                         or epoch == cfg.epochs - 1)):
                report = evaluate_model(model, corpus, cfg.weights, cfg.top_h, cfg.nms_iou)
                final_miou = report.miou
                if report.miou > best_miou:
                    best_miou, best_epoch = report.miou, epoch
                    if best_dir.exists():
                        shutil.rmtree(best_dir)
                    shutil.copytree(last_dir, best_dir)

    if best_epoch < 0:  # eval disabled; mirror last into best
        best_epoch, best_miou = cfg.epochs - 1, float("nan")
        if best_dir.exists():
            shutil.rmtree(best_dir)
        shutil.copytree(last_dir, best_dir)
    return TrainResult(out, loss_log, last_dir, best_dir, history,
                       best_epoch, best_miou, final_miou)


def infer_video(model: GroundingNetwork, video: VideoRecord, dyn_raw, sta_raw,
                weights: LossWeights, top_h: int, nms_iou: float) -> list:
    """Ranked (Moment, score) lists per query via the fine-granularity path."""
    dyn_t = torch.as_tensor(dyn_raw, dtype=model.dtype_)
    sta_t = torch.as_tensor(sta_raw, dtype=model.dtype_)
    expected = model.cfg.raw_dim
    if dyn_t.shape[1] != expected or sta_t.shape[1] != expected:
        raise ValueError(
            f"feature width {dyn_t.shape[1]} does not match checkpoint width {expected}"
        )
    with torch.no_grad():
        maps = model.fine_score_maps(dyn_t, sta_t, [list(q.tokens) for q in video.queries])
        blended = ScoreMap(blend_scores(maps["dyn"].scores, maps["sta"].scores, weights),
                           maps["dyn"].mask)
    results = []
    for qi in range(len(video.queries)):
        ranked = rank_proposals(blended, qi, top_h, nms_iou)
        results.append([
            (clip_span_to_moment(span, video.duration, video.num_clips), score)
            for span, score in ranked
        ])
    return results


def predict_corpus(model: GroundingNetwork, corpus: Corpus, weights: LossWeights,
                   top_h: int, nms_iou: float) -> dict:
    predictions = {}
    for video in corpus.dataset.videos:
        per_query = infer_video(model, video, corpus.dynamic[video.video_id],
                                corpus.static[video.video_id], weights, top_h, nms_iou)
        for query, ranked in zip(video.queries, per_query):
            predictions[query.query_id] = ranked
    return predictions


def evaluate_model(model: GroundingNetwork, corpus: Corpus, weights: LossWeights,
                   top_h: int, nms_iou: float) -> evaluation.MetricReport:
    predictions = predict_corpus(model, corpus, weights, top_h, nms_iou)
    moments_only = {qid: [m for m, _ in ranked] for qid, ranked in predictions.items()}
    return evaluation.compute_metrics(moments_only, ground_truth_of(corpus))


def ground_truth_of(corpus: Corpus) -> dict:
    return {q.query_id: q.moment for v in corpus.dataset.videos for q in v.queries}


def write_predictions(path: Union[str, Path], predictions: dict) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for query_id, ranked in predictions.items():
            fh.write(json.dumps({
                "query_id": query_id,
                "proposals": [
                    {"start": m.start, "end": m.end, "score": float(score)}
                    for m, score in ranked
                ],
            }) + "\n")


def read_predictions(path: Union[str, Path]) -> dict:
    out = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            out[raw["query_id"]] = [
                (Moment(p["start"], p["end"]), p["score"]) for p in raw["proposals"]
            ]
    return out


def load_model(checkpoint_dir: Union[str, Path]) -> tuple[GroundingNetwork, TrainConfig, dict]:
    tensors, meta = load_checkpoint(checkpoint_dir)
    model = model_from_checkpoint(tensors, meta)
    train_cfg = TrainConfig.from_flat_dict(meta["train"])
    return model, train_cfg, meta


def check_feature_compatibility(meta: dict, video: VideoRecord) -> None:
    expected = meta.get("num_clips")
    if expected is not None and video.num_clips != expected:
        raise ValueError(
            f"video {video.video_id} has {video.num_clips} clips, checkpoint "
            f"was trained with {expected}"
        )
