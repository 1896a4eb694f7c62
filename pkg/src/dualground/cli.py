"""Command-line entry point: generate, train, eval, inspect-graph, losses-report.

Exit codes: 0 success, 1 validation error (bad flags, config, data, or a
failed --min-miou gate), 2 runtime failure. Every run writes a manifest
with the fully resolved configuration at start and finalizes it on exit.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import torch

from . import __version__, evaluation, trainer
from .blobio import BlobError, load_corpus, save_corpus, _atomic_write_json
from .data import DatasetError
from .graphs import build_graph
from .synth import SynthConfig, generate

SEED_ENV_VAR = "SDGAN_SEED"

_VALIDATION_ERRORS = (DatasetError, BlobError, ValueError, FileNotFoundError,
                      json.JSONDecodeError, KeyError)


class _UsageExit(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise _UsageExit(1)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunManifest:
    """Config snapshot + timestamps, written atomically at start and end."""

    def __init__(self, out_dir: Path, command: str, config: dict, seed):
        self.path = Path(out_dir) / "run_manifest.json"
        self.payload = {
            "command": command,
            "config": config,
            "seed": seed,
            "version": __version__,
            "started_at": _now(),
            "finished_at": None,
            "status": "running",
            "artifacts": {},
        }
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _atomic_write_json(self.path, self.payload)

    def finalize(self, status: str, artifacts: dict | None = None) -> None:
        self.payload["status"] = status
        self.payload["finished_at"] = _now()
        if artifacts:
            self.payload["artifacts"].update(
                {k: str(v) for k, v in artifacts.items()})
        _atomic_write_json(self.path, self.payload)


def _cmd_generate(args) -> int:
    if args.videos < 1:
        raise ValueError("--videos must be >= 1")
    cfg = SynthConfig(num_clips=args.clips, signal_strength=args.signal,
                      noise_std=args.noise, seed=args.seed)
    manifest = RunManifest(args.out_dir, "generate",
                           {**cfg.__dict__, "videos": args.videos,
                            "queries_per_video": args.queries_per_video},
                           args.seed)
    try:
        corpus = generate(cfg, args.videos, args.queries_per_video)
        save_corpus(corpus, args.out_dir)
    except BaseException:
        manifest.finalize("failed")
        raise
    manifest.finalize("ok", {"data_dir": args.out_dir})
    print(f"wrote {len(corpus.dataset.videos)} videos "
          f"({corpus.dataset.num_queries} queries) to {args.out_dir}")
    return 0


def _cmd_train(args) -> int:
    cfg = trainer.TrainConfig.from_file(args.config)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        cfg = replace(cfg, seed=int(env_seed))
    corpus = load_corpus(args.data)
    manifest = RunManifest(args.out, "train", cfg.to_flat_dict(), cfg.seed)
    try:
        result = trainer.train(corpus, cfg, args.out)
    except BaseException:
        manifest.finalize("failed")
        raise
    manifest.finalize("ok", {
        "loss_log": result.loss_log,
        "checkpoint_last": result.last_checkpoint,
        "checkpoint_best": result.best_checkpoint,
        "best_epoch": result.best_epoch,
        "best_miou": result.best_miou,
    })
    print(f"trained {cfg.epochs} epochs; best mIoU {result.best_miou:.2f} "
          f"at epoch {result.best_epoch}")
    return 0


def _cmd_eval(args) -> int:
    model, train_cfg, meta = trainer.load_model(args.checkpoint)
    corpus = load_corpus(args.data)
    for video in corpus.dataset.videos:
        trainer.check_feature_compatibility(meta, video)
    out_dir = Path(args.pred).parent
    manifest = RunManifest(out_dir if str(out_dir) else Path("."), "eval",
                           train_cfg.to_flat_dict(), train_cfg.seed)
    try:
        predictions = trainer.predict_corpus(model, corpus, train_cfg.weights,
                                             train_cfg.top_h, train_cfg.nms_iou)
        trainer.write_predictions(args.pred, predictions)
        moments = {qid: [m for m, _ in ranked] for qid, ranked in predictions.items()}
        report = evaluation.compute_metrics(moments, trainer.ground_truth_of(corpus))
        report_path = Path(args.report) if args.report else Path(args.pred).with_suffix(".metrics.csv")
        report_path.write_text(evaluation.render_csv(report), encoding="utf-8")
        sys.stdout.write(evaluation.render_table(report))
    except BaseException:
        manifest.finalize("failed")
        raise
    manifest.finalize("ok", {"predictions": args.pred, "report": report_path})
    if args.min_miou is not None and report.miou < args.min_miou:
        print(f"mIoU {report.miou:.2f} below required {args.min_miou:.2f}",
              file=sys.stderr)
        return 1
    return 0


def _cmd_inspect_graph(args) -> int:
    model, train_cfg, meta = trainer.load_model(args.checkpoint)
    corpus = load_corpus(args.data)
    video = corpus.dataset.video(args.video)
    trainer.check_feature_compatibility(meta, video)
    dyn = torch.as_tensor(corpus.dynamic[video.video_id], dtype=model.dtype_)
    sta = torch.as_tensor(corpus.static[video.video_id], dtype=model.dtype_)
    with torch.no_grad():
        fused_dyn, fused_sta, _ = model.encode_fuse(
            dyn, sta, [list(q.tokens) for q in video.queries])
    rows = []
    for stream, feats in (("dyn", fused_dyn), ("sta", fused_sta)):
        graph = build_graph(feats, model.cfg.graph_edges, model.cfg.rbf_sigma)
        for e in range(graph.num_edges):
            # node indices are stored 0-based in files
            rows.append((stream, int(graph.src[e]), int(graph.dst[e]),
                         float(graph.cosine[e]), float(graph.weight[e])))
    target = Path(args.out) if args.out else None
    fh = target.open("w", encoding="utf-8", newline="") if target else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["stream", "src", "dst", "cosine", "weight"])
        for row in rows:
            writer.writerow(row)
    finally:
        if target:
            fh.close()
    return 0


def _cmd_losses_report(args) -> int:
    path = Path(args.log)
    with path.open("r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: loss log is empty")
    numeric = [c for c in reader.fieldnames if c not in ("epoch", "branch")]
    lines = [f"{'component'.ljust(14)}  {'first':>12}  {'last':>12}  {'min':>12}"]
    for col in numeric:
        series = [float(r[col]) for r in rows]
        lines.append(f"{col.ljust(14)}  {series[0]:12.6f}  {series[-1]:12.6f}  "
                     f"{min(series):12.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dualground",
                     description="dual-stream graph temporal grounding toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic corpus")
    gen.add_argument("--videos", type=int, required=True)
    gen.add_argument("--queries-per-video", type=int, default=3)
    gen.add_argument("--clips", type=int, default=16)
    gen.add_argument("--signal", type=float, default=5.0)
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", required=True)
    gen.set_defaults(func=_cmd_generate)

    tr = sub.add_parser("train", help="train on a generated corpus")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="predict and score a corpus")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--report", default=None)
    ev.add_argument("--min-miou", type=float, default=None)
    ev.set_defaults(func=_cmd_eval)

    ig = sub.add_parser("inspect-graph", help="dump a video's edge lists as CSV")
    ig.add_argument("--checkpoint", required=True)
    ig.add_argument("--data", required=True)
    ig.add_argument("--video", required=True)
    ig.add_argument("--out", default=None)
    ig.set_defaults(func=_cmd_inspect_graph)

    lr = sub.add_parser("losses-report", help="summarize a training loss log")
    lr.add_argument("--log", required=True)
    lr.add_argument("--out", default=None)
    lr.set_defaults(func=_cmd_losses_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit as exc:
        return int(exc.code)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
