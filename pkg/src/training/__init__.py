from src.training.checkpoint import Checkpoint, checkpoint_path, latest_checkpoint
from src.training.compare import compare_modes
from src.training.optim import build_sgd, guarded_step, sgd_step
from src.training.trainer import PnocTrainer, TrainResult, sample_class, train

__all__ = [
    "Checkpoint",
    "PnocTrainer",
    "TrainResult",
    "build_sgd",
    "checkpoint_path",
    "compare_modes",
    "guarded_step",
    "latest_checkpoint",
    "sample_class",
    "sgd_step",
    "train",
]
