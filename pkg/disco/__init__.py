"""Disentangled-context transformer for non-autoregressive sequence transduction."""

from .config import ExperimentConfig, load_config
from .data import CorpusBundle, TaskSpec, Vocabulary, generate_corpus
from .inference import DecodeConfig, Hypothesis, decode
from .model import Model, ModelConfig, VisibilityMask, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CorpusBundle", "DecodeConfig", "ExperimentConfig", "Hypothesis", "Model", "ModelConfig",
    "TaskSpec", "TrainConfig", "VisibilityMask", "Vocabulary", "decode", "generate_corpus",
    "load_checkpoint", "load_config", "save_checkpoint", "train",
]
