"""Annotation schema, moment arithmetic, and coarse/fine clip index mapping.

Clip indices are 1-based in memory (ranges are [1, T]); file formats that
carry clip indices store them 0-based and readers/writers shift. All data
objects are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

# Boundary snap tolerance, in clip-width units. Span endpoints expressed in
# seconds (duration * k / T) can land one ulp off the exact clip edge; without
# the snap the discretization would shift by a whole clip.
_EDGE_EPS = 1e-9


class DatasetError(ValueError):
    """Annotation file failed schema or invariant validation."""


@dataclass(frozen=True)
class Moment:
    """Time interval in seconds. Degenerate (start == end) moments are legal."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"moment endpoints must be finite, got ({self.start}, {self.end})")
        if self.start < 0:
            raise ValueError(f"moment start must be non-negative, got {self.start}")
        if self.start > self.end:
            raise ValueError(f"moment start {self.start} exceeds end {self.end}")

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ClipSpan:
    """Inclusive 1-based clip index range [start_clip, end_clip]."""

    start_clip: int
    end_clip: int

    def __post_init__(self) -> None:
        if self.start_clip < 1:
            raise ValueError(f"clip indices are 1-based, got start {self.start_clip}")
        if self.start_clip > self.end_clip:
            raise ValueError(f"span start {self.start_clip} exceeds end {self.end_clip}")

    @property
    def num_clips(self) -> int:
        return self.end_clip - self.start_clip + 1


@dataclass(frozen=True)
class Query:
    query_id: str
    tokens: tuple[int, ...]
    moment: Moment


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    duration: float
    num_clips: int
    queries: tuple[Query, ...]

    def __post_init__(self) -> None:
        if not math.isfinite(self.duration) or self.duration <= 0:
            raise ValueError(f"video {self.video_id}: duration must be positive, got {self.duration}")
        if self.num_clips < 2:
            raise ValueError(f"video {self.video_id}: need at least 2 clips, got {self.num_clips}")
        for q in self.queries:
            if q.moment.end > self.duration * (1 + 1e-12) + 1e-12:
                raise ValueError(
                    f"video {self.video_id}, query {q.query_id}: moment "
                    f"[{q.moment.start}, {q.moment.end}] exceeds duration {self.duration}"
                )


@dataclass(frozen=True)
class GranularityConfig:
    """Fine clip count T, window n, and the implied coarse count t = T / n."""

    fine_clips: int
    window: int

    def __post_init__(self) -> None:
        if self.fine_clips < 1 or self.window < 1:
            raise ValueError("fine_clips and window must be positive")
        if self.fine_clips % self.window != 0:
            raise ValueError(
                f"window {self.window} does not divide fine clip count {self.fine_clips}"
            )

    @property
    def coarse_clips(self) -> int:
        return self.fine_clips // self.window


@dataclass(frozen=True)
class GroundingDataset:
    videos: tuple[VideoRecord, ...]
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        index = {v.video_id: v for v in self.videos}
        if len(index) != len(self.videos):
            raise DatasetError("duplicate video_id in dataset")
        object.__setattr__(self, "_index", index)

    def video(self, video_id: str) -> VideoRecord:
        return self._index[video_id]

    @property
    def num_queries(self) -> int:
        return sum(len(v.queries) for v in self.videos)


def clip_width(duration: float, num_clips: int) -> float:
    return duration / num_clips


def moment_to_clip_span(moment: Moment, duration: float, num_clips: int) -> ClipSpan:
    """Smallest clip span whose time extent covers the moment.

    Clip i covers [(i-1)*duration/T, i*duration/T). A degenerate moment maps
    to the single clip containing that instant.
    """
    if num_clips < 1:
        raise ValueError("num_clips must be >= 1")
    _check_within(moment, duration)
    w = clip_width(duration, num_clips)
    if moment.start == moment.end:
        i = _clip_of_instant(moment.start, w, num_clips)
        return ClipSpan(i, i)
    j = min(int(math.floor(moment.start / w + _EDGE_EPS)) + 1, num_clips)
    k = min(int(math.ceil(moment.end / w - _EDGE_EPS)), num_clips)
    k = max(k, j)
    return ClipSpan(j, k)


def contained_clip_span(moment: Moment, duration: float, num_clips: int) -> ClipSpan:
    """Span of clips lying fully inside the moment.

    When no clip fits (the moment is shorter than one clip and straddles no
    full clip) the result snaps to the single clip containing the moment's
    midpoint, so callers always get at least one positive clip.
    """
    if num_clips < 1:
        raise ValueError("num_clips must be >= 1")
    _check_within(moment, duration)
    w = clip_width(duration, num_clips)
    j = int(math.ceil(moment.start / w - _EDGE_EPS)) + 1
    k = int(math.floor(moment.end / w + _EDGE_EPS))
    j = max(j, 1)
    k = min(k, num_clips)
    if j > k:
        mid = 0.5 * (moment.start + moment.end)
        i = _clip_of_instant(mid, w, num_clips)
        return ClipSpan(i, i)
    return ClipSpan(j, k)


def clip_span_to_moment(span: ClipSpan, duration: float, num_clips: int) -> Moment:
    """Time extent of a clip span; endpoints snap exactly to 0 / duration."""
    if span.end_clip > num_clips:
        raise ValueError(f"span {span} exceeds clip count {num_clips}")
    start = 0.0 if span.start_clip == 1 else duration * (span.start_clip - 1) / num_clips
    end = duration if span.end_clip == num_clips else duration * span.end_clip / num_clips
    return Moment(start, end)


def fine_to_coarse(span: ClipSpan, cfg: GranularityConfig) -> ClipSpan:
    """Map a fine-granularity span to coarse indices (ceil of idx / window)."""
    if span.end_clip > cfg.fine_clips:
        raise ValueError(f"span {span} exceeds fine clip count {cfg.fine_clips}")
    n = cfg.window
    return ClipSpan((span.start_clip + n - 1) // n, (span.end_clip + n - 1) // n)


def iou(a: Union[Moment, ClipSpan], b: Union[Moment, ClipSpan]) -> float:
    """Intersection over union for two moments or two clip spans.

    Clip spans count clips inclusively (span (j, k) has k - j + 1 clips).
    Two identical zero-length moments have IoU 1.0, distinct ones 0.0.
    """
    if isinstance(a, Moment) and isinstance(b, Moment):
        inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
        union = a.length + b.length - inter
        if union <= 0.0:
            return 1.0 if (a.start == b.start and a.end == b.end) else 0.0
        return inter / union
    if isinstance(a, ClipSpan) and isinstance(b, ClipSpan):
        inter = min(a.end_clip, b.end_clip) - max(a.start_clip, b.start_clip) + 1
        if inter <= 0:
            return 0.0
        union = a.num_clips + b.num_clips - inter
        return inter / union
    raise TypeError("iou arguments must both be Moment or both be ClipSpan")


def _clip_of_instant(t: float, width: float, num_clips: int) -> int:
    return min(int(math.floor(t / width + _EDGE_EPS)) + 1, num_clips)


def _check_within(moment: Moment, duration: float) -> None:
    if moment.end > duration * (1 + 1e-12) + 1e-12:
        raise ValueError(f"moment [{moment.start}, {moment.end}] outside [0, {duration}]")


def load_dataset(path: Union[str, Path]) -> GroundingDataset:
    """Parse a JSON-lines annotation file, validating every record.

    Schema per line: {"video_id": str, "duration": float, "num_clips": int,
    "queries": [{"query_id": str, "tokens": [int], "start": float, "end": float}]}.
    """
    path = Path(path)
    videos: list[VideoRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            videos.append(_parse_record(raw, path, lineno))
    return GroundingDataset(videos=tuple(videos))


def save_dataset(dataset: GroundingDataset, path: Union[str, Path]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for video in dataset.videos:
            fh.write(json.dumps(_record_to_json(video)) + "\n")


def _parse_record(raw: dict, path: Path, lineno: int) -> VideoRecord:
    where = f"{path}:{lineno}"
    try:
        video_id = str(raw["video_id"])
        duration = float(raw["duration"])
        num_clips = int(raw["num_clips"])
        queries = []
        for q in raw["queries"]:
            query_id = str(q["query_id"])
            try:
                moment = Moment(float(q["start"]), float(q["end"]))
            except ValueError as exc:
                raise DatasetError(f"{where}: query {query_id}: {exc}") from exc
            queries.append(Query(query_id, tuple(int(t) for t in q["tokens"]), moment))
    except KeyError as exc:
        raise DatasetError(f"{where}: missing field {exc}") from exc
    try:
        return VideoRecord(video_id, duration, num_clips, tuple(queries))
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from exc


def _record_to_json(video: VideoRecord) -> dict:
    return {
        "video_id": video.video_id,
        "duration": video.duration,
        "num_clips": video.num_clips,
        "queries": [
            {
                "query_id": q.query_id,
                "tokens": list(q.tokens),
                "start": q.moment.start,
                "end": q.moment.end,
            }
            for q in video.queries
        ],
    }
