import logging
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.cams.core import ImageSample, mask_to_labels, normalize_cam, resize_maps
from src.evaluation.metrics import ConfusionMatrix
from src.evaluation.sweep import decide
from src.validation import DataError

logger = logging.getLogger(__name__)


@torch.no_grad()
def estimate_epoch_miou(
    model: torch.nn.Module,
    samples: Sequence[ImageSample],
    common_size: int,
    delta_bg: float = 0.25,
) -> float:
    """
    Cheap mIoU estimate: one forward pass per image (no TTA) in a fixed
    common_size x common_size frame, ground truth resized with nearest
    neighbour. Read-only on the model; never used to steer training.
    """
    if not samples:
        raise ValueError("estimate_epoch_miou: empty sample list")
    if common_size < 8:
        raise ValueError(f"common_size must be >= 8, got {common_size}")

    was_training = model.training
    model.eval()
    conf = None
    try:
        for sample in samples:
            if sample.gt_mask is None:
                raise DataError(f"estimate_epoch_miou: sample '{sample.id}' has no ground-truth mask")
            if conf is None:
                conf = ConfusionMatrix(sample.num_classes)
            size = (common_size, common_size)
            image = resize_maps(sample.image.unsqueeze(0), size)
            cams = resize_maps(model(image), size)[0]
            prior = mask_to_labels(normalize_cam(cams), sample.labels)
            gt = F.interpolate(
                torch.from_numpy(sample.gt_mask.astype(np.float32))[None, None], size=size, mode="nearest"
            )[0, 0].numpy().astype(np.uint8)
            conf.accumulate(decide(prior.numpy(), delta_bg), gt)
    finally:
        model.train(was_training)

    _, mean = conf.miou()
    return float("nan") if mean is None else mean
