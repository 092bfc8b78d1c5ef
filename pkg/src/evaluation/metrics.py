"""
Streaming confusion matrices and IoU.

Row = ground truth, column = prediction; index 0 is background and c+1 is
foreground class c. Ground-truth pixels equal to 255 are counted as ignored.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from PIL import Image

from src.datasets.masks import read_mask
from src.models import EvalSummary
from src.validation import IGNORE_INDEX, DataError, ensure_same_shape

logger = logging.getLogger(__name__)


class ConfusionMatrix:
    def __init__(self, num_classes: int):
        """`num_classes` foreground classes; the matrix is (C+1) x (C+1)."""
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        self.size = num_classes + 1
        self.counts = np.zeros((self.size, self.size), dtype=np.int64)
        self.ignored = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        ensure_same_shape(pred, gt, ("pred", "gt"))
        if (pred == IGNORE_INDEX).any():
            raise ValueError("accumulate: predictions must not contain the ignore label 255")
        if pred.size and (pred.min() < 0 or pred.max() >= self.size):
            raise ValueError(f"accumulate: prediction values must lie in 0..{self.num_classes}")

        valid = gt != IGNORE_INDEX
        gt_valid = gt[valid].astype(np.int64)
        if gt_valid.size and (gt_valid.min() < 0 or gt_valid.max() >= self.size):
            raise ValueError(f"accumulate: ground-truth values must lie in 0..{self.num_classes} or 255")

        index = self.size * gt_valid + pred[valid].astype(np.int64)
        self.counts += np.bincount(index, minlength=self.size ** 2).reshape(self.size, self.size)
        self.ignored += int((~valid).sum())
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.size != self.size:
            raise ValueError(f"cannot merge {self.size}x{self.size} with {other.size}x{other.size} matrices")
        merged = ConfusionMatrix(self.num_classes)
        merged.counts = self.counts + other.counts
        merged.ignored = self.ignored + other.ignored
        return merged

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return self.merge(other)

    def iou(self) -> np.ndarray:
        """Per-class IoU in percent; NaN where prediction and ground truth are both empty."""
        inter = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(union > 0, 100.0 * inter / union, np.nan)

    def miou(self) -> tuple[np.ndarray, Optional[float]]:
        per_class = self.iou()
        if np.isnan(per_class).all():
            logger.warning("mIoU undefined: every class has an empty union")
            return per_class, None
        return per_class, float(np.nanmean(per_class))

    def summary(self, class_names: Sequence[str], kind: str = "full") -> EvalSummary:
        per_class, mean = self.miou()
        return EvalSummary(
            kind=kind,
            class_names=list(class_names),
            per_class=[None if np.isnan(v) else round(float(v), 2) for v in per_class],
            miou=None if mean is None else round(mean, 2),
            ignored_pixels=self.ignored,
        )


def accumulate(conf: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    return conf.accumulate(pred, gt)


def miou(conf: ConfusionMatrix) -> tuple[np.ndarray, Optional[float]]:
    return conf.miou()


def align_to_gt(pred: np.ndarray, gt_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of a label map; ingestion may have trimmed odd sizes."""
    if pred.shape == tuple(gt_shape):
        return pred
    resized = Image.fromarray(pred.astype(np.uint8)).resize((gt_shape[1], gt_shape[0]), Image.NEAREST)
    return np.array(resized)


def _evaluate_chunk(ids: list[str], pred_dir: Path, gt_dir: Path, num_classes: int) -> ConfusionMatrix:
    conf = ConfusionMatrix(num_classes)
    for sample_id in ids:
        gt_path = gt_dir / f"{sample_id}.png"
        if not gt_path.exists():
            raise DataError(f"Missing ground-truth mask for sample '{sample_id}' in {gt_dir}")
        gt = read_mask(gt_path)
        pred = align_to_gt(read_mask(pred_dir / f"{sample_id}.png"), gt.shape)
        try:
            conf.accumulate(pred, gt)
        except ValueError as e:
            raise DataError(f"Sample '{sample_id}': {e}") from e
    return conf


def evaluate_dirs(
    pred_dir: str | Path,
    gt_dir: str | Path,
    num_classes: int,
    workers: int = 1,
    ids: Optional[list[str]] = None,
) -> ConfusionMatrix:
    """
    Score every `<id>.png` in pred_dir against gt_dir. Work is split into
    contiguous chunks, one matrix per worker, merged in submission order.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if ids is None:
        ids = sorted(p.stem for p in pred_dir.glob("*.png"))
    if not ids:
        raise DataError(f"No predicted masks found in {pred_dir}")

    workers = max(1, min(workers, len(ids)))
    chunk = -(-len(ids) // workers)
    chunks = [ids[i: i + chunk] for i in range(0, len(ids), chunk)]
    if workers == 1:
        return _evaluate_chunk(ids, pred_dir, gt_dir, num_classes)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_evaluate_chunk, part, pred_dir, gt_dir, num_classes) for part in chunks]
        matrices = [future.result() for future in futures]

    total = matrices[0]
    for matrix in matrices[1:]:
        total = total + matrix
    logger.info(f"Evaluated {len(ids)} masks with {workers} workers")
    return total


def write_per_class_csv(summary: EvalSummary, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame({"class": summary.class_names, "iou": summary.per_class})
    table.to_csv(path, index=False)
    return path
