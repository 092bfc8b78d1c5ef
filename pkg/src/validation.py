"""
Validation utilities for tensors, arrays and files entering the pipeline.

Stages exchange data through files written by earlier stages or by external
tools (VOC-layout datasets, prior dumps). Anything read from disk or handed
over by a caller may contain:
- NaN/Inf activations from a diverged model
- Odd spatial sizes that break tiling
- Values outside [0, 1] where a normalized map is required
- Mismatched shapes between predictions and ground truth

All stage inputs pass through these checks before use.
"""

import logging
import math

import numpy as np
import torch

logger = logging.getLogger(__name__)

IGNORE_INDEX = 255


class PipelineError(Exception):
    """Base class for errors surfaced to the CLI with a dedicated exit code."""

    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class DataError(PipelineError):
    exit_code = 3


class StageError(PipelineError):
    exit_code = 4


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(np.asarray(value))


def ensure_finite(maps, name: str = "maps", channel_dim: int = -3) -> None:
    """
    Reject NaN/Inf values, naming the first channel (class index) that holds one.
    `channel_dim` selects the axis reported as the class index.
    """
    t = _as_tensor(maps).detach()
    if not t.is_floating_point():
        return
    finite = torch.isfinite(t)
    if bool(finite.all()):
        return
    if t.dim() >= abs(channel_dim):
        bad = (~finite).movedim(channel_dim, 0).reshape(t.shape[channel_dim], -1).any(dim=1)
        index = int(torch.nonzero(bad)[0])
        raise ValueError(f"{name}: non-finite values in class index {index}")
    raise ValueError(f"{name}: non-finite values")


def ensure_even_spatial(x, name: str = "image") -> None:
    """Tiling needs even H and W on the last two axes."""
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"{name}: spatial size {h}x{w} must be even on both axes")


def ensure_unit_interval(x, name: str = "map", tolerance: float = 1e-6) -> None:
    t = _as_tensor(x).detach()
    if t.numel() == 0:
        return
    low, high = float(t.min()), float(t.max())
    if low < -tolerance or high > 1 + tolerance:
        raise ValueError(f"{name}: values must lie in [0, 1], got [{low:.6g}, {high:.6g}]")


def ensure_same_shape(a, b, names: tuple[str, str] = ("a", "b")) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(
            f"shape mismatch: {names[0]}{tuple(a.shape)} vs {names[1]}{tuple(b.shape)}"
        )


def ensure_open_interval(value: float, name: str, low: float = 0.0, high: float = 1.0) -> float:
    """Validate a scalar threshold lies strictly inside (low, high)."""
    try:
        num = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name}: not a number: {value!r}") from None
    if math.isnan(num) or not (low < num < high):
        raise ValueError(f"{name}: must lie in ({low}, {high}), got {num}")
    return num


def ensure_label_values(mask: np.ndarray, num_classes: int, name: str = "mask") -> None:
    """Masks hold values in {0..C} plus the ignore index."""
    values = np.unique(mask)
    bad = values[(values > num_classes) & (values != IGNORE_INDEX)]
    if bad.size:
        raise DataError(f"{name}: label values {bad.tolist()} outside 0..{num_classes} and {IGNORE_INDEX}")


def nearest_even(size: int) -> int:
    """Largest even size not above `size` (minimum 2)."""
    even = size - (size % 2)
    if even != size:
        logger.debug(f"Resizing odd dimension {size} -> {even}")
    return max(even, 2)
