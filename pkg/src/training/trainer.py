"""
Alternating P-NOC optimization.

Each batch runs two phases:
  f phase    noc is frozen; f minimizes the P-OC objective (vanilla and
             Puzzle modes use the reduced objective and no second network)
  noc phase  f is untouched; noc minimizes lambda_noc * cls on images whose
             f-activated regions (psi > delta_noc) are painted with the
             erase fill, the color the trunk normalizes to zero

Randomness: sample order comes from (seed, epoch), augmentation from
(seed, epoch, index) and erased classes from a trainer-owned generator that
is checkpointed, so a resumed run reproduces the uninterrupted metrics log.
"""

import copy
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import torch

from src.cams.core import gap_logits, merge, normalize_cam, tile
from src.cams.network import CamNetwork, build_cam_network, clone_weights, erase_fill
from src.cams.priors import make_priors
from src.config import PipelineConfig, TrainConfig, dump_config
from src.datasets.augment import augment
from src.evaluation.estimate import estimate_epoch_miou
from src.models import LossReport, StepRecord, TrainMode
from src.objectives.losses import cse_soft_mask, noc_hard_mask, noc_loss, poc_loss, soft_margin_loss
from src.objectives.schedules import ScheduleSet, effective_noc_lr, schedule_value
from src.training.checkpoint import Checkpoint
from src.training.optim import build_sgd, guarded_step
from src.validation import ConfigError, DataError, StageError

logger = logging.getLogger(__name__)

METRICS_LOG = "metrics.log"
ESTIMATES_LOG = "estimates.log"
EFFECTIVE_LR_CSV = "effective_lr.csv"
CONFIG_SNAPSHOT = "config.snapshot"
MODEL_FILE = "model.pt"
NOC_FILE = "noc.pt"
PRIORS_DIR = "priors"


def sample_class(y, rng: np.random.Generator) -> int:
    """Uniform draw over the positive entries of y; exactly one RNG call."""
    positives = np.flatnonzero(torch.as_tensor(y).detach().cpu().numpy() > 0)
    if positives.size == 0:
        raise ValueError("sample_class: label vector has no positive class")
    return int(positives[rng.integers(positives.size)])


@contextmanager
def frozen(module: torch.nn.Module):
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, flag in zip(module.parameters(), flags):
            p.requires_grad_(flag)


@dataclass
class TrainResult:
    run_dir: Path
    model: CamNetwork
    noc: Optional[CamNetwork] = None
    optimizer_steps: int = 0


class PnocTrainer:
    def __init__(
        self,
        num_classes: int,
        config: TrainConfig,
        network_config,
        steps_per_epoch: int,
        oc_model: Optional[CamNetwork] = None,
    ):
        if steps_per_epoch < 1:
            raise ValueError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
        self.config = config
        self.mode = TrainMode(config.mode)
        self.seed = int(config.seed or 0)
        self.steps_per_epoch = steps_per_epoch
        self.total_steps = config.epochs * steps_per_epoch
        self.sched = ScheduleSet.from_config(config.schedule, self.total_steps)

        torch.manual_seed(self.seed)
        self.f = build_cam_network(num_classes, network_config)
        if self.mode.uses_puzzle and config.crop_size % (2 * self.f.stride):
            raise ConfigError(
                f"train.crop_size {config.crop_size} must be a multiple of {2 * self.f.stride} for tiled training"
            )

        self.noc: Optional[CamNetwork] = None
        if self.mode.uses_oc:
            if oc_model is None:
                raise StageError(f"mode {self.mode.value} needs a trained ordinary classifier (run train-oc first)")
            self.noc = copy.deepcopy(oc_model)
        # f starts from the ordinary classifier and trains at the pretrained rate
        self.warm_start = self.mode.uses_oc and config.init_from_oc
        if self.warm_start:
            clone_weights(self.f, oc_model)
        self.fill = erase_fill()

        self.opt_f = build_sgd(self.f.parameters(), config.weight_decay, config.momentum)
        self.opt_noc = None
        if self.mode is TrainMode.P_NOC:
            self.opt_noc = build_sgd(self.noc.parameters(), config.weight_decay, config.momentum)

        self.rng = np.random.default_rng([self.seed, 1])
        self.optimizer_steps = 0
        self.skipped_steps = 0

    def lr_f(self, step: int) -> float:
        base = self.config.lr_pretrained if self.warm_start else self.config.lr_scratch
        return base * schedule_value(self.sched, "lr_decay", step)

    def lr_noc(self, step: int) -> float:
        return self.config.lr_pretrained * schedule_value(self.sched, "lr_decay", step)

    def pnoc_step(
        self, x: torch.Tensor, y: torch.Tensor, step: int, apply_update: bool = True
    ) -> tuple[LossReport, Optional[LossReport]]:
        """One batch: the f phase, then (p_noc only, every k_noc steps) the noc phase."""
        if bool((y.sum(dim=1) <= 0).any()):
            raise ValueError("pnoc_step: every sample needs at least one positive class")

        r = None
        if self.mode.uses_oc:
            r = torch.tensor([sample_class(row, self.rng) for row in y], dtype=torch.long)

        self.f.train()
        A = self.f(x)
        A_re = None
        if self.mode.uses_puzzle:
            pieces = self.f(torch.cat(tile(x)))
            A_re = merge(list(pieces.chunk(4)))

        A_oc = None
        psi_r = None
        if self.mode.uses_oc:
            psi_r = normalize_cam(A)[torch.arange(len(r)), r]
            self.noc.eval()
            with frozen(self.noc):
                A_oc = self.noc(cse_soft_mask(x, psi_r, self.fill))

        total, report = poc_loss(
            A, A_re, A_oc, y, r, step, self.sched, self.config.restrict_re_to_labels
        )
        (total / self.config.accumulation).backward()
        if apply_update:
            if guarded_step(self.opt_f, self.lr_f(step)):
                self.optimizer_steps += 1
            else:
                self.skipped_steps += 1
            self.opt_f.zero_grad()

        noc_report = None
        if self.mode is TrainMode.P_NOC and step % self.sched.k_noc == 0:
            noc_report = self._noc_phase(x, y, psi_r.detach(), step)
        return report, noc_report

    def _noc_phase(self, x: torch.Tensor, y: torch.Tensor, psi_r: torch.Tensor, step: int) -> LossReport:
        self.noc.train()
        x_hat = noc_hard_mask(x, psi_r, self.sched.delta_noc, self.fill)
        A_noc = self.noc(x_hat)
        loss = noc_loss(A_noc, y, self.sched, step)
        with torch.no_grad():
            cls = soft_margin_loss(gap_logits(A_noc), y, self.sched.smoothing_eps)

        self.opt_noc.zero_grad()
        loss.backward()
        guarded_step(self.opt_noc, self.lr_noc(step))
        self.opt_noc.zero_grad()
        weight = schedule_value(self.sched, "lambda_noc", step)
        return LossReport.from_components({"noc": float(cls)}, {"noc": weight})

    def make_batch(self, dataset, indices, epoch: int) -> tuple[torch.Tensor, torch.Tensor]:
        images, labels = [], []
        cfg = self.config
        for index in indices:
            sample = dataset[int(index)]
            if not sample.positive_classes:
                raise DataError(f"Sample '{sample.id}' has no positive class; cannot train on it")
            rng = np.random.default_rng([self.seed, epoch, int(index)])
            sample, _ = augment(
                sample, cfg.augment, rng, cfg.crop_size, (cfg.scale_min, cfg.scale_max), cfg.hflip
            )
            images.append(sample.image)
            labels.append(sample.labels)
        return torch.stack(images), torch.stack(labels).float()

    def checkpoint(self, step: int, metrics: list[str], estimates: Optional[list[str]] = None) -> Checkpoint:
        return Checkpoint(
            step=step,
            f_state=copy.deepcopy(self.f.state_dict()),
            noc_state=copy.deepcopy(self.noc.state_dict()) if self.noc is not None else None,
            f_optim=copy.deepcopy(self.opt_f.state_dict()),
            noc_optim=copy.deepcopy(self.opt_noc.state_dict()) if self.opt_noc is not None else None,
            rng_state={"classes": self.rng.bit_generator.state, "torch": torch.get_rng_state()},
            metrics_tail=list(metrics),
            estimates=list(estimates or []),
            skipped_steps=self.skipped_steps,
        )

    def restore(self, ckpt: Checkpoint) -> None:
        self.f.load_state_dict(ckpt.f_state)
        if ckpt.f_optim:
            self.opt_f.load_state_dict(ckpt.f_optim)
        if self.noc is not None and ckpt.noc_state is not None:
            self.noc.load_state_dict(ckpt.noc_state)
        if self.opt_noc is not None and ckpt.noc_optim:
            self.opt_noc.load_state_dict(ckpt.noc_optim)
        self.rng.bit_generator.state = ckpt.rng_state["classes"]
        if "torch" in ckpt.rng_state:
            torch.set_rng_state(ckpt.rng_state["torch"])
        self.skipped_steps = ckpt.skipped_steps
        logger.info(f"Resumed from step {ckpt.step}")

    def write_effective_lr(self, path: Path) -> Path:
        steps = range(self.total_steps + 1)
        table = pd.DataFrame({
            "step": list(steps),
            "lr": [self.config.lr_pretrained * schedule_value(self.sched, "lr_decay", s) for s in steps],
            "lambda_noc": [schedule_value(self.sched, "lambda_noc", s) for s in steps],
            "effective_lr": [effective_noc_lr(self.sched, self.config.lr_pretrained, s) for s in steps],
        })
        table.to_csv(path, index=False)
        return path

    def fit(
        self,
        dataset,
        run_dir: str | Path,
        gt_dataset=None,
        estimate_size: int = 64,
        estimate_delta: float = 0.25,
        resume: Optional[str | Path] = None,
    ) -> TrainResult:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg = self.config
        n = len(dataset)

        start_step = 0
        lines: list[str] = []
        estimates: list[str] = []
        if resume is not None:
            ckpt = Checkpoint.load(resume)
            self.restore(ckpt)
            start_step = ckpt.step
            lines = list(ckpt.metrics_tail)
            estimates = list(ckpt.estimates)

        estimates_path = run_dir / ESTIMATES_LOG
        estimates_path.unlink(missing_ok=True)
        if gt_dataset is not None:
            estimates_path.write_text("".join(line + "\n" for line in estimates))

        metrics_path = run_dir / METRICS_LOG
        with open(metrics_path, "w") as metrics:
            for line in lines:
                metrics.write(line + "\n")
            for epoch in range(start_step // self.steps_per_epoch, cfg.epochs):
                order = np.random.default_rng([self.seed, epoch]).permutation(n)
                for b in range(self.steps_per_epoch):
                    step = epoch * self.steps_per_epoch + b
                    if step < start_step:
                        continue
                    x, y = self.make_batch(dataset, order[b * cfg.batch_size: (b + 1) * cfg.batch_size], epoch)
                    apply = (step + 1) % cfg.accumulation == 0 or step == self.total_steps - 1
                    report, noc_report = self.pnoc_step(x, y, step, apply)

                    record = StepRecord(
                        step=step,
                        lr=self.lr_f(step),
                        f=report,
                        noc=noc_report,
                        noc_skipped=self.mode is TrainMode.P_NOC and noc_report is None,
                    )
                    line = record.to_line()
                    lines.append(line)
                    metrics.write(line + "\n")
                    logger.debug(line)

                    if b == self.steps_per_epoch - 1 and gt_dataset is not None:
                        estimates.append(self._log_estimate(estimates_path, epoch, gt_dataset, estimate_size, estimate_delta))

                    if apply and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                        metrics.flush()
                        self.checkpoint(step + 1, lines, estimates).save(run_dir)

                logger.info(f"Epoch {epoch + 1}/{cfg.epochs} done ({self.mode.value}): {lines[-1]}")

        self.checkpoint(self.total_steps, lines, estimates).save(run_dir)
        torch.save(self.f.state_dict(), run_dir / MODEL_FILE)
        if self.noc is not None:
            torch.save(self.noc.state_dict(), run_dir / NOC_FILE)
        if self.mode is TrainMode.P_NOC:
            self.write_effective_lr(run_dir / EFFECTIVE_LR_CSV)
        if self.skipped_steps:
            logger.warning(f"{self.skipped_steps} f updates skipped on non-finite gradients")

        return TrainResult(run_dir=run_dir, model=self.f, noc=self.noc, optimizer_steps=self.optimizer_steps)

    def _log_estimate(self, path: Path, epoch: int, gt_dataset, size: int, delta: float) -> str:
        samples = [gt_dataset[i] for i in range(len(gt_dataset))]
        value = estimate_epoch_miou(self.f, samples, size, delta)
        line = f"epoch={epoch + 1} miou_estimate={value:.2f}"
        with open(path, "a") as f:
            f.write(line + "\n")
        logger.info(f"Epoch {epoch + 1}: mIoU estimate {value:.2f} (single scale, not a final score)")
        return line


def train(
    dataset,
    config: PipelineConfig,
    out_dir: str | Path,
    mode: Optional[str] = None,
    oc_model: Optional[CamNetwork] = None,
    gt_dataset=None,
    resume: Optional[str | Path] = None,
    priors_dataset=None,
) -> TrainResult:
    """
    Train one CAM network in `mode` (default: train.mode) and persist the run
    directory. With `priors_dataset`, the trained network's TTA priors for it
    are written to <out_dir>/priors.
    """
    if len(dataset) == 0:
        raise DataError("Cannot train on an empty dataset")
    train_config = config.train if mode is None else replace(config.train, mode=mode)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = replace(config, train=train_config)
    (out_dir / CONFIG_SNAPSHOT).write_text(dump_config(snapshot))

    steps_per_epoch = math.ceil(len(dataset) / train_config.batch_size)
    trainer = PnocTrainer(dataset.num_classes, train_config, config.network, steps_per_epoch, oc_model)
    logger.info(
        f"Training {trainer.mode.value}: {len(dataset)} samples, {train_config.epochs} epochs, "
        f"{trainer.total_steps} steps"
    )
    result = trainer.fit(
        dataset,
        out_dir,
        gt_dataset=gt_dataset,
        estimate_size=config.evaluation.common_size,
        estimate_delta=config.evaluation.delta_bg,
        resume=resume,
    )
    if priors_dataset is not None:
        make_priors(result.model, priors_dataset, out_dir / PRIORS_DIR, config.cams.scales, config.cams.use_flip)
    return result
