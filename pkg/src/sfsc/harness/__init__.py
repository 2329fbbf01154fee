"""Training, evaluation, baselines, reporting and the command-line interface."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import ingest_dataset
from .evaluate import evaluate_sweep
from .report import emit_report
from .train import train_baseline, train_csmdma, train_sfsc

__all__ = ["Checkpoint", "RunConfig", "emit_report", "evaluate_sweep", "ingest_dataset", "load_checkpoint",
           "load_config", "save_checkpoint", "train_baseline", "train_csmdma", "train_sfsc"]
