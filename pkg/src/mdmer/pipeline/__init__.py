"""Manifests, splits, training, evaluation, synthetic data and the CLI."""

from .config import MODES, ExperimentConfig, TrainingConfig
from .data import ManifestEntry, load_manifest, split_dataset, write_manifest
from .evaluation import EvalReport, score
from .synthetic import generate_synthetic
from .training import Session, TrainResult, evaluate_checkpoint, train

__all__ = [
    "MODES",
    "EvalReport",
    "ExperimentConfig",
    "ManifestEntry",
    "Session",
    "TrainResult",
    "TrainingConfig",
    "evaluate_checkpoint",
    "generate_synthetic",
    "load_manifest",
    "score",
    "split_dataset",
    "train",
    "write_manifest",
]
