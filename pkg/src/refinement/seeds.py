"""
Seed labels for affinity refinement: 0 = background, c+1 = class c, 255 = unknown.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.validation import IGNORE_INDEX, ensure_open_interval, ensure_same_shape, ensure_unit_interval

logger = logging.getLogger(__name__)

UNKNOWN = IGNORE_INDEX


@dataclass
class SeedMap:
    labels: np.ndarray  # [h, w] uint8

    @property
    def unknown_fraction(self) -> float:
        return unknown_fraction(self.labels)


def unknown_fraction(labels) -> float:
    labels = labels.labels if isinstance(labels, SeedMap) else np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float((labels == UNKNOWN).mean())


def _check_thresholds(low: float, high: float, low_name: str, high_name: str) -> None:
    if not 0 < low < high < 1:
        raise ValueError(f"expected 0 < {low_name} < {high_name} < 1, got {low}, {high}")


def seeds_from_priors(prior: np.ndarray, delta_bg: float = 0.1, delta_fg: float = 0.4) -> SeedMap:
    """Background below delta_bg, argmax class above delta_fg, unknown in between."""
    _check_thresholds(delta_bg, delta_fg, "delta_bg", "delta_fg")
    prior = np.asarray(prior)
    peak = prior.max(axis=0)
    labels = np.full(peak.shape, UNKNOWN, dtype=np.uint8)
    labels[peak < delta_bg] = 0
    fg = peak > delta_fg
    labels[fg] = prior.argmax(axis=0)[fg] + 1
    return SeedMap(labels)


def binarize(saliency, delta_sal: float = 0.5):
    """Salient where saliency >= delta_sal."""
    ensure_open_interval(delta_sal, "delta_sal")
    return saliency >= delta_sal


def seeds_with_saliency(
    prior: np.ndarray,
    saliency: np.ndarray,
    delta_fg: float = 0.4,
    delta_sal: float = 0.5,
    delta_bg: float = 0.1,
) -> SeedMap:
    """
    Non-salient pixels (saliency < delta_sal) are background whatever the
    prior says. Salient pixels take the argmax class when the prior peak
    exceeds delta_fg, stay background when the peak is below delta_bg, and
    are unknown in between. The unknown set is therefore a subset of the
    priors-only unknown set.
    """
    if not 0 < delta_fg < 1 or not 0 < delta_sal < 1:
        raise ValueError(f"delta_fg and delta_sal must lie in (0, 1), got {delta_fg}, {delta_sal}")
    _check_thresholds(delta_bg, delta_fg, "delta_bg", "delta_fg")
    prior = np.asarray(prior)
    saliency = np.asarray(saliency)
    ensure_same_shape(prior[0], saliency, ("prior", "saliency"))
    ensure_unit_interval(saliency, "saliency")

    peak = prior.max(axis=0)
    labels = np.full(peak.shape, UNKNOWN, dtype=np.uint8)
    fg = peak > delta_fg
    labels[fg] = prior.argmax(axis=0)[fg] + 1
    labels[(peak < delta_bg) | ~binarize(saliency, delta_sal)] = 0
    return SeedMap(labels)
