"""
VOC-style dataset layout:

    root/
      images/<id>.png|.jpg
      masks/<id>.png        indexed 8-bit, 0 = background, c+1 = class c, 255 = ignore
      labels.txt            "<id> <c>,<c>,..." with 0-based class indices
      classes.txt           optional, one class name per line
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from src.cams.core import ImageSample, resize_maps
from src.datasets.masks import read_image, read_mask
from src.validation import DataError, ensure_label_values, nearest_even

logger = logging.getLogger(__name__)

IMAGES_DIR = "images"
MASKS_DIR = "masks"
LABELS_FILE = "labels.txt"
CLASSES_FILE = "classes.txt"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def parse_labels_file(path: Path) -> list[tuple[str, list[int]]]:
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            sample_id = parts[0]
            if len(parts) == 1:
                raise DataError(f"{path}:{lineno}: empty label list for '{sample_id}'")
            if len(parts) > 2:
                raise DataError(f"{path}:{lineno}: expected '<id> <c>,<c>,...', got '{line}'")
            try:
                classes = sorted({int(token) for token in parts[1].split(",") if token != ""})
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer class index in '{parts[1]}'") from None
            if not classes:
                raise DataError(f"{path}:{lineno}: empty label list for '{sample_id}'")
            if classes[0] < 0:
                raise DataError(f"{path}:{lineno}: negative class index in '{parts[1]}'")
            entries.append((sample_id, classes))
    return entries


class VocDataset:
    """Samples decode lazily; the label matrix is materialized at load time."""

    def __init__(self, root: str | Path, require_masks: bool = False, ids: Optional[list[str]] = None):
        self.root = Path(root)
        labels_path = self.root / LABELS_FILE
        if not labels_path.exists():
            raise DataError(f"Labels file not found: {labels_path}")

        entries = parse_labels_file(labels_path)
        if ids is not None:
            wanted = set(ids)
            entries = [e for e in entries if e[0] in wanted]
        if not entries:
            raise DataError(f"No samples listed in {labels_path}")

        universe = max(c for _, classes in entries for c in classes) + 1
        classes_path = self.root / CLASSES_FILE
        if classes_path.exists():
            names = [n.strip() for n in classes_path.read_text().splitlines() if n.strip()]
            if universe > len(names):
                raise DataError(f"{labels_path}: class index {universe - 1} beyond {len(names)} names in {classes_path}")
            self.class_names = names
        else:
            self.class_names = [f"class_{c}" for c in range(universe)]

        self.ids = [sample_id for sample_id, _ in entries]
        self.labels = torch.zeros(len(entries), self.num_classes)
        for i, (_, classes) in enumerate(entries):
            self.labels[i, classes] = 1.0

        self.require_masks = require_masks
        if require_masks:
            missing = [i for i in self.ids if not self.mask_path(i).exists()]
            if missing:
                raise DataError(f"Missing ground-truth mask for sample '{missing[0]}' ({len(missing)} missing)")

        logger.info(f"Loaded {len(self.ids)} samples, {self.num_classes} classes from {self.root}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def has_masks(self) -> bool:
        return all(self.mask_path(i).exists() for i in self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def image_path(self, sample_id: str) -> Path:
        for suffix in IMAGE_SUFFIXES:
            candidate = self.root / IMAGES_DIR / f"{sample_id}{suffix}"
            if candidate.exists():
                return candidate
        raise DataError(f"No image found for sample '{sample_id}' under {self.root / IMAGES_DIR}")

    def mask_path(self, sample_id: str) -> Path:
        return self.root / MASKS_DIR / f"{sample_id}.png"

    def read_gt(self, sample_id: str) -> Optional[np.ndarray]:
        path = self.mask_path(sample_id)
        if not path.exists():
            if self.require_masks:
                raise DataError(f"Missing ground-truth mask for sample '{sample_id}'")
            return None
        mask = read_mask(path)
        ensure_label_values(mask, self.num_classes, sample_id)
        return mask

    def __getitem__(self, index: int) -> ImageSample:
        sample_id = self.ids[index]
        try:
            image = read_image(self.image_path(sample_id))
            mask = self.read_gt(sample_id)
        except DataError as e:
            raise DataError(f"Sample '{sample_id}': {e}") from e

        h, w = image.shape[-2:]
        even = (nearest_even(h), nearest_even(w))
        if even != (h, w):
            image = resize_maps(image, even)
            if mask is not None:
                mask = np.array(Image.fromarray(mask).resize((even[1], even[0]), Image.NEAREST))
        elif mask is not None and mask.shape != (h, w):
            raise DataError(f"Sample '{sample_id}': mask {mask.shape} does not match image {h}x{w}")

        try:
            return ImageSample(id=sample_id, image=image, labels=self.labels[index].clone(), gt_mask=mask)
        except ValueError as e:
            raise DataError(str(e)) from e


def load_voc(root: str | Path, require_masks: bool = False) -> VocDataset:
    return VocDataset(root, require_masks=require_masks)
