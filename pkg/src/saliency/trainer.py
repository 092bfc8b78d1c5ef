"""
Training and inference for the hint-guided disentangler, plus hint diagnostics.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import torch

from src.cams.core import resize_maps
from src.cams.io import cams_path, load_cams, save_cams
from src.cams.network import CamNetwork
from src.config import C2amConfig
from src.datasets.augment import augment
from src.datasets.masks import write_gray
from src.models import HintPrecision, LossReport
from src.saliency.losses import (
    HintMask,
    SimilarityTriple,
    c2am_components,
    extract_hints,
    fg_bg_features,
    hint_loss,
    rank_weights,
)
from src.refinement.seeds import binarize
from src.saliency.network import Disentangler, build_disentangler
from src.training.optim import build_sgd, guarded_step
from src.validation import IGNORE_INDEX, DataError

logger = logging.getLogger(__name__)

MODEL_FILE = "model.pt"
METRICS_LOG = "metrics.log"
DIAGNOSTICS_CSV = "diagnostics.csv"


@dataclass
class SaliencyRun:
    run_dir: Path
    model: Disentangler
    steps: int = 0
    skipped_batches: int = 0


def _load_prior(priors_dir: Path, sample_id: str, size: tuple[int, int]) -> torch.Tensor:
    prior = torch.from_numpy(load_cams(cams_path(priors_dir, sample_id)))
    return resize_maps(prior, size)


def _make_batch(dataset, indices, priors_dir: Path, config: C2amConfig, epoch: int, seed: int):
    images, priors = [], []
    for index in indices:
        sample = dataset[int(index)]
        prior = _load_prior(priors_dir, sample.id, tuple(sample.image.shape[-2:]))
        rng = np.random.default_rng([seed, epoch, int(index)])
        sample, prior = augment(
            sample,
            config.augment,
            rng,
            config.crop_size,
            (config.scale_min, config.scale_max),
            config.hflip,
            aux=prior,
        )
        images.append(sample.image)
        priors.append(prior)
    return torch.stack(images), torch.stack(priors)


def train_c2amh(
    dataset,
    priors_dir: str | Path,
    config: C2amConfig,
    network_config,
    out_dir: str | Path,
    classifier: Optional[CamNetwork] = None,
) -> SaliencyRun:
    """
    Fit the disentangler. With config.use_hints, fg hints extracted from the
    (augmented) priors anchor the foreground partition.
    """
    priors_dir = Path(priors_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(dataset) == 0:
        raise DataError("Cannot train the disentangler on an empty dataset")

    seed = int(config.seed or 0)
    torch.manual_seed(seed)
    model = build_disentangler(network_config)
    if classifier is not None and config.init_from_classifier:
        model.init_from_classifier(classifier)
    optimizer = build_sgd(model.parameters(), config.weight_decay, config.momentum)

    n = len(dataset)
    batches_per_epoch = -(-n // config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    run = SaliencyRun(run_dir=out_dir, model=model)
    logger.info(
        f"Training disentangler: {n} samples, {config.epochs} epochs, hints={'on' if config.use_hints else 'off'}"
    )

    with open(out_dir / METRICS_LOG, "w") as metrics:
        for epoch in range(config.epochs):
            order = np.random.default_rng([seed, epoch]).permutation(n)
            for b in range(batches_per_epoch):
                step = epoch * batches_per_epoch + b
                indices = order[b * config.batch_size: (b + 1) * config.batch_size]
                if len(indices) < 2:
                    run.skipped_batches += 1
                    logger.info(f"Step {step}: batch of {len(indices)} image(s) skipped, rank weights need 2")
                    continue

                x, priors = _make_batch(dataset, indices, priors_dir, config, epoch, seed)
                model.train()
                features, P = model(x)
                A = features.flatten(2)
                v_f, v_b = fg_bg_features(A, P.flatten(1))
                trip = SimilarityTriple.from_features(v_f, v_b)
                terms = c2am_components(trip, rank_weights(trip.s_f, config.alpha), rank_weights(trip.s_b, config.alpha))
                weights = {name: 1.0 for name in terms}
                if config.use_hints:
                    hints = extract_hints(resize_maps(priors, tuple(P.shape[-2:])), config.delta_fg, config.delta_bg)
                    terms["hint"] = hint_loss(P, hints.fg)
                    weights["hint"] = config.lambda_h

                total = sum(weights[k] * v for k, v in terms.items())
                optimizer.zero_grad()
                total.backward()
                lr = config.lr * (1.0 - step / total_steps)
                guarded_step(optimizer, lr)
                run.steps += 1

                report = LossReport.from_components({k: float(v.detach()) for k, v in terms.items()}, weights)
                metrics.write(f"step={step} lr={lr:.8e} {report.as_log_fields()}\n")
            logger.info(f"Disentangler epoch {epoch + 1}/{config.epochs} done")

    optimizer.zero_grad()
    torch.save(model.state_dict(), out_dir / MODEL_FILE)
    if run.skipped_batches:
        logger.warning(f"{run.skipped_batches} batch(es) with fewer than 2 images were skipped")
    return run


@torch.no_grad()
def emit_saliency(model: Disentangler, image: torch.Tensor) -> torch.Tensor:
    """P for one [3, H, W] image, bilinearly upsampled to [H, W]; high = foreground."""
    was_training = model.training
    model.eval()
    try:
        _, P = model(image.unsqueeze(0))
    finally:
        model.train(was_training)
    return resize_maps(P, tuple(image.shape[-2:]))[0].clamp(0.0, 1.0)


def make_saliency(model: Disentangler, dataset, out_dir: str | Path) -> list[Path]:
    """One 8-bit PNG (round(P * 255)) and one float `.cams` sidecar (C = 1) per sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(len(dataset)):
        sample = dataset[i]
        saliency = emit_saliency(model, sample.image)
        write_gray(out_dir / f"{sample.id}.png", saliency.numpy())
        written.append(save_cams(cams_path(out_dir, sample.id), saliency))
    logger.info(f"Wrote {len(written)} saliency maps to {out_dir}")
    return written


def hint_precision(hints: HintMask, gt_mask: np.ndarray, sample_id: str = "") -> HintPrecision:
    """Share of fg hints on GT foreground and of bg hints on GT background; ignore pixels excluded."""
    fg = hints.fg.numpy() if isinstance(hints.fg, torch.Tensor) else np.asarray(hints.fg)
    bg = hints.bg.numpy() if isinstance(hints.bg, torch.Tensor) else np.asarray(hints.bg)
    if fg.shape != gt_mask.shape:
        raise ValueError(f"hint_precision: hints {fg.shape} vs mask {gt_mask.shape}")
    valid = gt_mask != IGNORE_INDEX
    gt_fg = valid & (gt_mask > 0)
    gt_bg = gt_mask == 0

    fg_count = int((fg & valid).sum())
    bg_count = int((bg & valid).sum())
    return HintPrecision(
        sample_id=sample_id or hints.source_prior_id,
        fg_precision=float((fg & gt_fg).sum() / fg_count) if fg_count else None,
        bg_precision=float((bg & gt_bg).sum() / bg_count) if bg_count else None,
        fg_pixels=fg_count,
        bg_pixels=bg_count,
    )


def saliency_diagnostics(
    dataset,
    priors_dir: str | Path,
    saliency_dir: str | Path,
    config: C2amConfig,
) -> pd.DataFrame:
    """
    Per image: precision of the prior hints and the mean saliency on GT
    foreground and background, plus the share of pixels (and of GT
    foreground) that binarize as salient at delta_sal. `anchored` is true
    when foreground scores higher. Written to <saliency_dir>/diagnostics.csv.
    """
    priors_dir, saliency_dir = Path(priors_dir), Path(saliency_dir)
    rows = []
    for i in range(len(dataset)):
        sample = dataset[i]
        if sample.gt_mask is None:
            continue
        gt = sample.gt_mask
        prior = _load_prior(priors_dir, sample.id, gt.shape)
        precision = hint_precision(extract_hints(prior, config.delta_fg, config.delta_bg), gt, sample.id)

        saliency = torch.from_numpy(load_cams(cams_path(saliency_dir, sample.id)))
        saliency = resize_maps(saliency, gt.shape)[0].numpy()
        fg = (gt != IGNORE_INDEX) & (gt > 0)
        bg = gt == 0
        mean_fg = float(saliency[fg].mean()) if fg.any() else np.nan
        mean_bg = float(saliency[bg].mean()) if bg.any() else np.nan
        salient = binarize(saliency, config.delta_sal)
        rows.append({
            **precision.model_dump(),
            "saliency_fg": mean_fg,
            "saliency_bg": mean_bg,
            "salient_fraction": float(salient.mean()),
            "salient_fg_recall": float(salient[fg].mean()) if fg.any() else np.nan,
            "anchored": bool(mean_fg > mean_bg),
        })

    table = pd.DataFrame(rows)
    if table.empty:
        logger.warning("Saliency diagnostics skipped: no ground-truth masks")
        return table
    table.to_csv(saliency_dir / DIAGNOSTICS_CSV, index=False)
    logger.info(
        f"Hint precision fg={table['fg_precision'].mean():.3f} bg={table['bg_precision'].mean():.3f}; "
        f"saliency higher on foreground for {100.0 * table['anchored'].mean():.1f}% of images"
    )
    return table
