"""
Tensor-level CAM vocabulary: normalization, GAP posteriors, Puzzle tiling
and multi-scale/flip test-time augmentation.

Maps are laid out [C, h, w] or batched [B, C, h, w]; every function here
accepts both unless stated otherwise.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.models import CamSource
from src.validation import ensure_even_spatial, ensure_finite

logger = logging.getLogger(__name__)

# Denominator guard of the per-class max normalization
NORM_EPS = 1e-5


@dataclass
class ImageSample:
    id: str
    image: torch.Tensor  # [3, H, W] in [0, 1]
    labels: torch.Tensor  # [C] multi-hot
    gt_mask: Optional[np.ndarray] = None  # [H, W] uint8, 255 = ignore

    def __post_init__(self):
        if self.image.dim() != 3 or self.image.shape[0] != 3:
            raise ValueError(f"{self.id}: image must be [3, H, W], got {tuple(self.image.shape)}")
        h, w = self.image.shape[-2:]
        if h < 8 or w < 8:
            raise ValueError(f"{self.id}: image {h}x{w} is smaller than 8x8")
        ensure_even_spatial(self.image, self.id)
        if self.gt_mask is not None and self.gt_mask.shape != (h, w):
            raise ValueError(f"{self.id}: mask {self.gt_mask.shape} does not match image {h}x{w}")

    @property
    def num_classes(self) -> int:
        return int(self.labels.numel())

    @property
    def positive_classes(self) -> list[int]:
        return torch.nonzero(self.labels > 0).flatten().tolist()


@dataclass
class CamStack:
    raw: torch.Tensor
    normalized: torch.Tensor
    source: CamSource = CamSource.MAIN

    @classmethod
    def from_raw(cls, raw: torch.Tensor, source: CamSource = CamSource.MAIN) -> "CamStack":
        return cls(raw=raw, normalized=normalize_cam(raw), source=source)

    @property
    def logits(self) -> torch.Tensor:
        return gap_logits(self.raw)

    @property
    def posterior(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


def normalize_cam(raw: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """psi(A): ReLU, then divide each class map by (its max + eps)."""
    ensure_finite(raw, "cam", channel_dim=-3)
    positive = F.relu(raw)
    peak = positive.amax(dim=(-2, -1), keepdim=True)
    return positive / (peak + eps)


def gap_logits(raw: torch.Tensor) -> torch.Tensor:
    if raw.shape[-2] == 0 or raw.shape[-1] == 0:
        raise ValueError(f"gap over empty spatial dims {tuple(raw.shape)}")
    return raw.mean(dim=(-2, -1))


def gap_posterior(raw: torch.Tensor) -> torch.Tensor:
    """sigmoid(GAP(A)) per class: the classifier posterior p."""
    return torch.sigmoid(gap_logits(raw))


def tile(x: torch.Tensor) -> list[torch.Tensor]:
    """Four quadrants: top-left, top-right, bottom-left, bottom-right."""
    ensure_even_spatial(x, "tile input")
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    return [
        x[..., :h, :w],
        x[..., :h, w:],
        x[..., h:, :w],
        x[..., h:, w:],
    ]


def merge(pieces: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(pieces) != 4:
        raise ValueError(f"merge expects 4 pieces, got {len(pieces)}")
    shape = tuple(pieces[0].shape)
    for i, piece in enumerate(pieces[1:], start=1):
        if tuple(piece.shape) != shape:
            raise ValueError(f"merge: piece {i} has shape {tuple(piece.shape)}, expected {shape}")
    top = torch.cat([pieces[0], pieces[1]], dim=-1)
    bottom = torch.cat([pieces[2], pieces[3]], dim=-1)
    return torch.cat([top, bottom], dim=-2)


def resize_maps(maps: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear resize without corner alignment; [C,h,w] or [B,C,h,w]."""
    if tuple(maps.shape[-2:]) == tuple(size):
        return maps
    batched = maps.dim() == 4
    x = maps if batched else maps.unsqueeze(0)
    out = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
    return out if batched else out[0]


def mask_to_labels(prior: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Zero the maps of classes absent from the image-level labels."""
    keep = (labels > 0).to(prior.dtype)
    return prior * keep.reshape(*keep.shape, 1, 1)


@torch.no_grad()
def tta_prior(
    model: torch.nn.Module,
    image: torch.Tensor,
    scales: Sequence[float] = (1.0,),
    use_flip: bool = False,
) -> torch.Tensor:
    """
    Average CAMs over rescaled (and mirrored) copies of `image`, resized back
    to [H, W], then normalize. Variants are summed in a fixed order.
    """
    if not scales:
        raise ValueError("tta_prior: scales must be non-empty")
    for scale in scales:
        if scale <= 0:
            raise ValueError(f"tta_prior: scale must be > 0, got {scale}")

    was_training = model.training
    model.eval()
    height, width = image.shape[-2:]
    variants = []
    try:
        for scale in scales:
            size = (max(8, int(round(height * scale))), max(8, int(round(width * scale))))
            x = resize_maps(image.unsqueeze(0), size)
            batch = torch.cat([x, x.flip(-1)]) if use_flip else x
            cams = resize_maps(model(batch), (height, width))
            variants.append(cams[0])
            if use_flip:
                variants.append(cams[1].flip(-1))
    finally:
        model.train(was_training)

    logger.debug(f"tta_prior: averaged {len(variants)} variants")
    return normalize_cam(torch.stack(variants).mean(dim=0))
