"""Sequential recommendation that learns from both liked and disliked items.

Two causal transformer encoders share one item table: the positive encoder
reads liked items and drives recommendations, the negative encoder reads
disliked items and only shapes training through an extra cross-entropy term.
A contrastive term pushes predictions away from the user's disliked items.
"""

from .data import (
    InteractionLog,
    SplitBundle,
    assign_feedback,
    build_sequences,
    kcore_filter,
    load_interactions,
    load_split,
    save_split,
    temporal_split,
)
from .losses import LossWeights
from .metrics import EvalReport, evaluate_model, split_eval
from .model import EncoderConfig, SeqRecModel, Variant
from .synth import SynthConfig, generate
from .training import TrainConfig, TuneGrid, train, tune_incremental

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "EvalReport",
    "InteractionLog",
    "LossWeights",
    "SeqRecModel",
    "SplitBundle",
    "SynthConfig",
    "TrainConfig",
    "TuneGrid",
    "Variant",
    "assign_feedback",
    "build_sequences",
    "evaluate_model",
    "generate",
    "kcore_filter",
    "load_interactions",
    "load_split",
    "save_split",
    "split_eval",
    "temporal_split",
    "train",
    "tune_incremental",
]
