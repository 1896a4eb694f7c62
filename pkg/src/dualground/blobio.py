"""Binary tensor blobs, corpus layout, and checkpoint persistence.

Feature blob: 16-byte header (magic "SDGF", version u32, rows u32, cols u32,
little-endian) followed by row-major float32 payload. One blob per stream per
video. Checkpoints are a directory of blobs plus a manifest.json listing
tensor names, true shapes, and blob files.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .data import GroundingDataset, load_dataset, save_dataset

MAGIC = b"SDGF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

ANNOTATIONS_FILE = "annotations.jsonl"
FEATURES_DIR = "features"
TOKEN_TABLE_FILE = "token_embeddings.bin"


class BlobError(ValueError):
    """Feature blob failed header or size validation."""


def write_feature_blob(path: Union[str, Path], array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"feature blobs are 2-D, got shape {array.shape}")
    payload = _HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]) + arr.tobytes()
    Path(path).write_bytes(payload)


def read_feature_blob(path: Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise BlobError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BlobError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BlobError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise BlobError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, cols).copy()


@dataclass
class Corpus:
    """A dataset plus its per-video stream features and the token table."""

    dataset: GroundingDataset
    dynamic: dict  # video_id -> (T, D_raw) float32
    static: dict  # video_id -> (T, D_raw) float32
    token_table: np.ndarray  # (vocab, embed_dim) float32


def save_corpus(corpus: Corpus, out_dir: Union[str, Path]) -> None:
    out = Path(out_dir)
    (out / FEATURES_DIR).mkdir(parents=True, exist_ok=True)
    save_dataset(corpus.dataset, out / ANNOTATIONS_FILE)
    write_feature_blob(out / TOKEN_TABLE_FILE, corpus.token_table)
    for video in corpus.dataset.videos:
        write_feature_blob(out / FEATURES_DIR / f"{video.video_id}.dynamic.bin",
                           corpus.dynamic[video.video_id])
        write_feature_blob(out / FEATURES_DIR / f"{video.video_id}.static.bin",
                           corpus.static[video.video_id])


def load_corpus(data_dir: Union[str, Path]) -> Corpus:
    root = Path(data_dir)
    dataset = load_dataset(root / ANNOTATIONS_FILE)
    token_table = read_feature_blob(root / TOKEN_TABLE_FILE)
    dynamic, static = {}, {}
    for video in dataset.videos:
        dyn = read_feature_blob(root / FEATURES_DIR / f"{video.video_id}.dynamic.bin")
        sta = read_feature_blob(root / FEATURES_DIR / f"{video.video_id}.static.bin")
        for name, arr in (("dynamic", dyn), ("static", sta)):
            if arr.shape[0] != video.num_clips:
                raise BlobError(
                    f"{video.video_id}: {name} blob has {arr.shape[0]} rows, "
                    f"annotation says {video.num_clips} clips"
                )
        dynamic[video.video_id] = dyn
        static[video.video_id] = sta
    return Corpus(dataset, dynamic, static, token_table)


def save_checkpoint(ckpt_dir: Union[str, Path], tensors: Mapping[str, np.ndarray],
                    meta: dict) -> None:
    """Write named tensors as float32 blobs plus a manifest with true shapes."""
    out = Path(ckpt_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, name in enumerate(sorted(tensors)):
        arr = np.asarray(tensors[name], dtype=np.float32)
        fname = f"{idx:03d}.bin"
        rows = arr.shape[0] if arr.ndim >= 1 and arr.shape[0] > 0 else 1
        flat = arr.reshape(rows, -1) if arr.size else arr.reshape(1, 0)
        write_feature_blob(out / fname, flat)
        entries.append({"name": name, "shape": list(arr.shape), "file": fname})
    manifest = {"format": "dualground-checkpoint", "version": 1,
                "tensors": entries, "meta": meta}
    _atomic_write_json(out / "manifest.json", manifest)


def load_checkpoint(ckpt_dir: Union[str, Path]) -> tuple[dict, dict]:
    """Read a checkpoint directory back into {name: float32 ndarray} plus meta."""
    root = Path(ckpt_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != "dualground-checkpoint":
        raise BlobError(f"{root}: not a checkpoint directory")
    tensors = {}
    for entry in manifest["tensors"]:
        flat = read_feature_blob(root / entry["file"])
        tensors[entry["name"]] = flat.reshape(entry["shape"])
    return tensors, manifest["meta"]


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)
