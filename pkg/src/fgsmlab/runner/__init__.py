"""Experiment engine: training, evaluation, checkpoints and reporting."""

from .analysis import AnalysisReport, analyze, plot, read_metrics, render_svg
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import SETTINGS, TrainConfig
from .training import (TrainResult, emit_adversarial_set, evaluate, load_datasets,
                       total_loss, train, train_all_settings, train_step)

__all__ = [
    "AnalysisReport", "Checkpoint", "SETTINGS", "TrainConfig", "TrainResult", "analyze",
    "emit_adversarial_set", "evaluate", "load_checkpoint", "load_datasets", "plot",
    "read_metrics", "render_svg", "save_checkpoint", "total_loss", "train",
    "train_all_settings", "train_step",
]
