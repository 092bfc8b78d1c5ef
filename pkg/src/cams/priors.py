import logging
from pathlib import Path
from typing import Sequence

import torch

from src.cams.core import mask_to_labels, tta_prior
from src.cams.io import cams_path, save_cams

logger = logging.getLogger(__name__)


def make_priors(
    model: torch.nn.Module,
    dataset,
    out_dir: str | Path,
    scales: Sequence[float] = (0.5, 1.0, 1.5, 2.0),
    use_flip: bool = True,
) -> list[Path]:
    """Write one TTA prior per sample, restricted to its image-level classes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()

    written = []
    for i in range(len(dataset)):
        sample = dataset[i]
        prior = tta_prior(model, sample.image, scales, use_flip)
        prior = mask_to_labels(prior, sample.labels)
        written.append(save_cams(cams_path(out_dir, sample.id), prior))
        if (i + 1) % 50 == 0:
            logger.info(f"Priors: {i + 1}/{len(dataset)}")

    logger.info(f"Wrote {len(written)} priors to {out_dir} (scales={list(scales)}, flip={use_flip})")
    return written
