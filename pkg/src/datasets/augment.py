"""
Training-time augmentation: random rescale, reflect-padded random crop,
horizontal flip and color jitter, built on torchvision's v2 functional ops.
Ground-truth masks and auxiliary maps (priors) follow the image geometry
exactly.

Every call consumes the same number of RNG draws regardless of policy, so a
sample's augmentation depends only on the generator's state.
"""

import logging
from dataclasses import replace
from typing import Optional

import numpy as np
import torch
from torchvision import tv_tensors
from torchvision.transforms import InterpolationMode
from torchvision.transforms.v2 import functional as TF

from src.cams.core import ImageSample

logger = logging.getLogger(__name__)

POLICIES = ("color_jitter", "none")

BRIGHTNESS = 0.3
CONTRAST = 0.3
SATURATION = 0.3
HUE = 0.05


def color_jitter(image: torch.Tensor, brightness: float, contrast: float, saturation: float, hue: float) -> torch.Tensor:
    """Apply the four jitter factors in a fixed order; result clamped to [0, 1]."""
    out = TF.adjust_brightness(image, brightness)
    out = TF.adjust_contrast(out, contrast)
    out = TF.adjust_saturation(out, saturation)
    if hue:
        out = TF.adjust_hue(out, hue)
    return out.clamp(0.0, 1.0)


def _resize(image, size: tuple[int, int]):
    if tuple(image.shape[-2:]) == size:
        return image
    return TF.resize(image, list(size), interpolation=InterpolationMode.BILINEAR, antialias=False)


def _pad_to(image, crop: int):
    """Reflect-pad bottom and right up to at least crop x crop."""
    # reflect padding must stay below the current size, so grow in rounds
    while True:
        h, w = image.shape[-2:]
        pad_h, pad_w = min(max(0, crop - h), h - 1), min(max(0, crop - w), w - 1)
        if not pad_h and not pad_w:
            return image
        image = TF.pad(image, [0, 0, pad_w, pad_h], padding_mode="reflect")


def augment(
    sample: ImageSample,
    policy: str,
    rng: np.random.Generator,
    crop_size: Optional[int] = None,
    scale_range: tuple[float, float] = (0.5, 2.0),
    hflip: bool = True,
    aux: Optional[torch.Tensor] = None,
) -> tuple[ImageSample, Optional[torch.Tensor]]:
    """
    Returns the augmented sample and `aux` (maps [K, H, W] aligned with the
    image) transformed with the same geometry. `crop_size` None keeps the
    input size.
    """
    if policy not in POLICIES:
        raise ValueError(f"Unknown augmentation policy '{policy}'; expected one of {POLICIES}")
    low, high = scale_range
    if not 0 < low <= high:
        raise ValueError(f"scale_range must satisfy 0 < low <= high, got {scale_range}")

    height, width = sample.image.shape[-2:]
    crop = crop_size or min(height, width)
    if crop < 8 or crop % 2:
        raise ValueError(f"crop_size must be even and >= 8, got {crop}")

    scale = float(rng.uniform(low, high))
    offset_u, offset_v = rng.random(2)
    flip = bool(rng.random() < 0.5) and hflip
    factors = (
        rng.uniform(1 - BRIGHTNESS, 1 + BRIGHTNESS),
        rng.uniform(1 - CONTRAST, 1 + CONTRAST),
        rng.uniform(1 - SATURATION, 1 + SATURATION),
        rng.uniform(-HUE, HUE),
    )

    size = (max(8, int(round(height * scale))), max(8, int(round(width * scale))))
    # the mask rides along as a tv_tensors.Mask so resize picks nearest-neighbour
    views = [sample.image]
    if sample.gt_mask is not None:
        views.append(tv_tensors.Mask(torch.from_numpy(np.ascontiguousarray(sample.gt_mask))))
    if aux is not None:
        views.append(aux)

    views = [_pad_to(_resize(v, size), crop) for v in views]
    h, w = views[0].shape[-2:]
    top = int(offset_u * (h - crop + 1))
    left = int(offset_v * (w - crop + 1))
    views = [TF.crop(v, top, left, crop, crop) for v in views]
    if flip:
        views = [TF.horizontal_flip(v) for v in views]

    image = views.pop(0)
    mask = None
    if sample.gt_mask is not None:
        mask = np.ascontiguousarray(views.pop(0).as_subclass(torch.Tensor).numpy()).astype(np.uint8)
    maps = views.pop(0).contiguous() if aux is not None else None

    if policy == "color_jitter":
        image = color_jitter(image, *(float(f) for f in factors))

    return replace(sample, image=image.contiguous(), gt_mask=mask), maps
