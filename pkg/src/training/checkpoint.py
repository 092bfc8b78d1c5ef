"""Run checkpoints: checkpoints/step-N.bin, one torch.save'd dict per file."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from src.validation import DataError

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"


@dataclass
class Checkpoint:
    step: int
    f_state: dict
    noc_state: Optional[dict] = None
    f_optim: dict = field(default_factory=dict)
    noc_optim: Optional[dict] = None
    rng_state: dict = field(default_factory=dict)
    # metrics.log lines written up to `step`
    metrics_tail: list[str] = field(default_factory=list)
    # estimates.log lines written up to `step`
    estimates: list[str] = field(default_factory=list)
    skipped_steps: int = 0

    def save(self, run_dir: str | Path) -> Path:
        path = checkpoint_path(run_dir, self.step)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "step": self.step,
                "f_state": self.f_state,
                "noc_state": self.noc_state,
                "f_optim": self.f_optim,
                "noc_optim": self.noc_optim,
                "rng_state": self.rng_state,
                "metrics_tail": self.metrics_tail,
                "estimates": self.estimates,
                "skipped_steps": self.skipped_steps,
            },
            path,
        )
        logger.info(f"Checkpoint written: {path}")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise DataError(f"Checkpoint not found: {path}")
        try:
            raw = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as e:
            raise DataError(f"Failed to read checkpoint {path}: {e}") from e
        return cls(**raw)


def checkpoint_path(run_dir: str | Path, step: int) -> Path:
    return Path(run_dir) / CHECKPOINT_DIR / f"step-{step}.bin"


def latest_checkpoint(run_dir: str | Path) -> Optional[Path]:
    paths = list((Path(run_dir) / CHECKPOINT_DIR).glob("step-*.bin"))
    if not paths:
        return None
    return max(paths, key=lambda p: int(p.stem.split("-")[1]))
