"""
Class groups for per-group IoU reports.

VOC groups follow two axes: average relative object size (small / mid /
large) and co-occurrence context (singleton, traffic, person-related, room).
"""

import logging
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from src.datasets.synthetic import DEFAULT_GROUPS

logger = logging.getLogger(__name__)

VOC_CLASSES = [
    "aeroplane", "bicycle", "bird", "boat", "bottle",
    "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
]

VOC_GROUPS = {
    "small": ["bicycle", "boat", "bottle", "chair", "pottedplant"],
    "mid": ["aeroplane", "bird", "car", "cow", "person", "tvmonitor"],
    "large": ["bus", "cat", "diningtable", "dog", "horse", "motorbike", "sheep", "sofa", "train"],
    "singleton": ["aeroplane", "bird", "cat"],
    "traffic": ["bicycle", "bus", "car", "motorbike"],
    "p-rel": ["boat", "cow", "dog", "horse", "sheep", "train"],
    "room": ["chair", "diningtable", "pottedplant", "sofa", "tvmonitor"],
    "bottle": ["bottle"],
    "person": ["person"],
}


def resolve_groups(groups: Mapping[str, Sequence[str]], class_names: Sequence[str]) -> dict[str, list[int]]:
    """Map group members given by name to indices into `class_names`."""
    index = {name: i for i, name in enumerate(class_names)}
    resolved = {}
    for group, members in groups.items():
        missing = [m for m in members if m not in index]
        if missing:
            raise ValueError(f"group '{group}': unknown class name(s) {missing}")
        resolved[group] = [index[m] for m in members]
    return resolved


def default_groups(class_names: Sequence[str]) -> dict[str, list[int]]:
    """VOC groups for a VOC class list, synthetic groups for the bundled dataset, else none."""
    names = set(class_names)
    for table in (VOC_GROUPS, DEFAULT_GROUPS):
        if all(m in names for members in table.values() for m in members):
            return resolve_groups(table, class_names)
    return {}


def group_report(
    per_class_iou: Sequence[Optional[float]],
    groups: Mapping[str, Sequence[int]],
    class_names: Optional[Sequence[str]] = None,
) -> pd.DataFrame:
    """
    Mean member IoU per group. Members with undefined IoU are left out of the
    mean; a group with no defined member reports NaN (rendered as n/a).
    """
    values = [np.nan if v is None else float(v) for v in per_class_iou]
    rows = []
    for name, members in groups.items():
        for m in members:
            if not 0 <= m < len(values):
                raise ValueError(f"group '{name}': class index {m} outside 0..{len(values) - 1}")
        defined = [values[m] for m in members if not np.isnan(values[m])]
        rows.append({
            "group": name,
            "classes": ", ".join(class_names[m] for m in members) if class_names else ", ".join(map(str, members)),
            "n": len(members),
            "mean_iou": float(np.mean(defined)) if defined else np.nan,
        })
        if not defined:
            logger.debug(f"Group '{name}' has no defined IoU")
    return pd.DataFrame(rows, columns=["group", "classes", "n", "mean_iou"])


def format_group_table(table: pd.DataFrame) -> pd.DataFrame:
    out = table.copy()
    out["mean_iou"] = [("n/a" if np.isnan(v) else f"{v:.2f}") for v in table["mean_iou"]]
    return out
