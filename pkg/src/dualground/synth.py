"""Synthetic corpus generator that plants recoverable query-moment signal.

Stands in for pretrained video/text backbones: each query gets a random
ground-truth clip span, and clips inside that span receive an additive
pattern derived from the query's token embedding. The span's first and
last clips additionally carry boundary markers (fixed global rotations of
the same query-derived direction), so the moment's extent, not just
membership, is recoverable from features alone. The dynamic and static
streams see the same signal through different fixed linear projections;
the static stream is additionally sample-and-hold downsampled (one refresh
every `static_refresh` clips) to mimic sparsely sampled frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blobio import Corpus
from .data import ClipSpan, GroundingDataset, Query, VideoRecord, clip_span_to_moment


@dataclass(frozen=True)
class SynthConfig:
    num_clips: int = 16
    raw_dim: int = 32
    vocab_size: int = 50
    signal_strength: float = 5.0
    noise_std: float = 0.1
    seed: int = 0
    clip_seconds: float = 2.0
    min_tokens: int = 3
    max_tokens: int = 6
    static_refresh: int = 4

    def __post_init__(self) -> None:
        if self.num_clips < 2:
            raise ValueError("num_clips must be >= 2")
        if self.signal_strength < 0 or self.noise_std < 0:
            raise ValueError("signal_strength and noise_std must be non-negative")
        if self.vocab_size < 1 or self.raw_dim < 1:
            raise ValueError("vocab_size and raw_dim must be positive")
        if not (1 <= self.min_tokens <= self.max_tokens):
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        if self.static_refresh < 1:
            raise ValueError("static_refresh must be >= 1")


def generate(cfg: SynthConfig, num_videos: int, queries_per_video: int) -> Corpus:
    """Build a deterministic corpus; same config + seed gives bit-identical output."""
    if num_videos < 1:
        raise ValueError("num_videos must be >= 1")
    total_spans = cfg.num_clips * (cfg.num_clips + 1) // 2
    if queries_per_video < 1 or queries_per_video > total_spans:
        raise ValueError(
            f"queries_per_video must be in [1, {total_spans}] for {cfg.num_clips} clips"
        )

    children = np.random.SeedSequence(cfg.seed).spawn(2 + num_videos)
    table_rng = np.random.default_rng(children[0])
    proj_rng = np.random.default_rng(children[1])

    token_table = table_rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.raw_dim))

    def _draw_proj():
        return proj_rng.normal(0.0, 1.0, size=(cfg.raw_dim, cfg.raw_dim)) / np.sqrt(cfg.raw_dim)

    # Per stream: one projection for span membership, two more for the
    # start/end boundary markers. All are fixed across the corpus.
    proj = {"dyn": (_draw_proj(), _draw_proj(), _draw_proj()),
            "sta": (_draw_proj(), _draw_proj(), _draw_proj())}

    span_list = [
        ClipSpan(j, k)
        for j in range(1, cfg.num_clips + 1)
        for k in range(j, cfg.num_clips + 1)
    ]
    duration = cfg.num_clips * cfg.clip_seconds

    videos = []
    dynamic, static = {}, {}
    for v, child in enumerate(children[2:]):
        rng = np.random.default_rng(child)
        video_id = f"v{v:04d}"
        chosen = rng.choice(total_spans, size=queries_per_video, replace=False)

        dyn = rng.normal(0.0, cfg.noise_std, size=(cfg.num_clips, cfg.raw_dim))
        sta_base = rng.normal(0.0, cfg.noise_std, size=(cfg.num_clips, cfg.raw_dim))

        queries = []
        for q, span_idx in enumerate(chosen):
            span = span_list[int(span_idx)]
            n_tokens = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
            tokens = tuple(int(t) for t in rng.integers(0, cfg.vocab_size, size=n_tokens))
            moment = clip_span_to_moment(span, duration, cfg.num_clips)
            queries.append(Query(f"{video_id}:q{q}", tokens, moment))

            pattern = _unit(np.mean(token_table[list(tokens)], axis=0))
            lo, hi = span.start_clip - 1, span.end_clip
            # Boundary markers are half the membership magnitude: strong
            # enough to localize span ends, weak enough that every in-span
            # clip stays nearest to its span's centroid.
            for target, (inside, start_mark, end_mark) in ((dyn, proj["dyn"]),
                                                           (sta_base, proj["sta"])):
                target[lo:hi] += cfg.signal_strength * _unit(inside @ pattern)
                target[lo] += 0.5 * cfg.signal_strength * _unit(start_mark @ pattern)
                target[hi - 1] += 0.5 * cfg.signal_strength * _unit(end_mark @ pattern)

        # Sample-and-hold: the static stream only refreshes at block starts.
        hold = (np.arange(cfg.num_clips) // cfg.static_refresh) * cfg.static_refresh
        sta = sta_base[hold]

        videos.append(VideoRecord(video_id, duration, cfg.num_clips, tuple(queries)))
        dynamic[video_id] = dyn.astype(np.float32)
        static[video_id] = sta.astype(np.float32)

    return Corpus(
        dataset=GroundingDataset(videos=tuple(videos)),
        dynamic=dynamic,
        static=static,
        token_table=token_table.astype(np.float32),
    )


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 1e-12 else vec
