"""Dual-stream graph temporal grounding with synthetic feature backbones."""

__version__ = "0.1.0"

from .data import (ClipSpan, DatasetError, GranularityConfig, GroundingDataset, Moment,
                   Query, VideoRecord, clip_span_to_moment, contained_clip_span,
                   fine_to_coarse, iou, load_dataset, moment_to_clip_span, save_dataset)
from .losses import LossWeights
from .model import GroundingNetwork, ModelConfig
from .synth import SynthConfig, generate
from .trainer import BranchSchedule, TrainConfig, train

__all__ = [
    "BranchSchedule",
    "ClipSpan",
    "DatasetError",
    "GranularityConfig",
    "GroundingDataset",
    "GroundingNetwork",
    "LossWeights",
    "ModelConfig",
    "Moment",
    "Query",
    "SynthConfig",
    "TrainConfig",
    "VideoRecord",
    "clip_span_to_moment",
    "contained_clip_span",
    "fine_to_coarse",
    "generate",
    "iou",
    "load_dataset",
    "moment_to_clip_span",
    "save_dataset",
    "train",
    "__version__",
]
