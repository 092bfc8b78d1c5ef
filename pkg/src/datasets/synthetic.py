"""
Synthetic shapes dataset written in the VOC layout.

Classes are chosen to exercise the usual failure modes of CAM priors:
  slab      large singleton: big textured rectangle, never shares an image
  disc      co-occurs with triangle (pair_rate)
  triangle  co-occurring partner of disc
  bar       thin structure, a few pixels wide
  ring      annulus, mid-sized
"""

import logging
from pathlib import Path

import numpy as np
import torch

from src.datasets.masks import write_image, write_mask
from src.datasets.voc import CLASSES_FILE, IMAGES_DIR, LABELS_FILE, MASKS_DIR

logger = logging.getLogger(__name__)

CLASS_NAMES = ["slab", "disc", "triangle", "bar", "ring"]

CLASS_COLORS = {
    "slab": (0.85, 0.35, 0.20),
    "disc": (0.20, 0.45, 0.90),
    "triangle": (0.25, 0.80, 0.30),
    "bar": (0.95, 0.85, 0.15),
    "ring": (0.70, 0.25, 0.80),
}

# Spatial frequency of each class's stripe texture (cycles per pixel)
CLASS_TEXTURE = {
    "slab": 0.08,
    "disc": 0.20,
    "triangle": 0.14,
    "bar": 0.0,
    "ring": 0.25,
}

# Group definitions along the size and co-occurrence axes
DEFAULT_GROUPS = {
    "small": ["bar"],
    "mid": ["disc", "triangle", "ring"],
    "large": ["slab"],
    "singleton": ["slab"],
    "pair": ["disc", "triangle"],
    "thin": ["bar"],
}


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return ys, xs


def _shape_mask(name: str, size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = _grid(size)
    cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)

    if name == "slab":
        half_h, half_w = rng.uniform(0.25 * size, 0.38 * size, size=2)
        cy, cx = rng.uniform(0.4 * size, 0.6 * size, size=2)
        return (np.abs(ys - cy) <= half_h) & (np.abs(xs - cx) <= half_w)

    if name == "disc":
        radius = rng.uniform(0.12 * size, 0.2 * size)
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= radius ** 2

    if name == "ring":
        outer = rng.uniform(0.14 * size, 0.22 * size)
        inner = outer - max(2.0, 0.06 * size)
        dist2 = (ys - cy) ** 2 + (xs - cx) ** 2
        return (dist2 <= outer ** 2) & (dist2 >= inner ** 2)

    if name == "triangle":
        radius = rng.uniform(0.15 * size, 0.24 * size)
        theta = rng.uniform(0, 2 * np.pi)
        angles = theta + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        vy, vx = cy + radius * np.sin(angles), cx + radius * np.cos(angles)
        signs = []
        for k in range(3):
            j = (k + 1) % 3
            signs.append((vx[j] - vx[k]) * (ys - vy[k]) - (vy[j] - vy[k]) * (xs - vx[k]))
        signs = np.stack(signs)
        return np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)

    if name == "bar":
        half_len = rng.uniform(0.25 * size, 0.4 * size)
        half_width = max(1.0, 0.025 * size)
        theta = rng.uniform(0, np.pi)
        u = (xs - cx) * np.cos(theta) + (ys - cy) * np.sin(theta)
        v = -(xs - cx) * np.sin(theta) + (ys - cy) * np.cos(theta)
        return (np.abs(u) <= half_len) & (np.abs(v) <= half_width)

    raise ValueError(f"Unknown synthetic class '{name}'")


def _texture(name: str, size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = _grid(size)
    freq = CLASS_TEXTURE[name]
    phase = rng.uniform(0, 2 * np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xs + ys) + phase)
    color = np.array(CLASS_COLORS[name])[:, None, None]
    return color * (0.75 + 0.25 * stripes)[None]


def _pick_classes(config, names: list[str], rng: np.random.Generator) -> list[str]:
    multi = len(names) > 1 and config.max_shapes > 1 and rng.random() < config.cooccurrence
    if not multi:
        return [names[int(rng.integers(len(names)))]]

    pool = [n for n in names if n != "slab"] or names
    k = int(rng.integers(max(2, config.min_shapes), max(2, config.max_shapes) + 1))
    k = min(k, len(pool))
    chosen = [pool[i] for i in sorted(rng.choice(len(pool), size=k, replace=False))]
    if "disc" in chosen and "triangle" in pool and "triangle" not in chosen and rng.random() < config.pair_rate:
        chosen.append("triangle")
    return chosen


def render_sample(config, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One image [3,S,S] in [0,1] and its mask [S,S] (0 = background, c+1 = class c)."""
    names = CLASS_NAMES[: config.num_classes]
    size = config.image_size

    base = rng.uniform(0.3, 0.6, size=3)[:, None, None]
    image = base + config.noise * 2 * rng.standard_normal((3, size, size))
    mask = np.zeros((size, size), dtype=np.uint8)

    for name in _pick_classes(config, names, rng):
        region = _shape_mask(name, size, rng)
        if not config.occlusion:
            for _ in range(10):
                if not (region & (mask > 0)).any():
                    break
                region = _shape_mask(name, size, rng)
            region &= mask == 0
        image = np.where(region[None], _texture(name, size, rng), image)
        mask[region] = names.index(name) + 1

    image = image + config.noise * rng.standard_normal((3, size, size))
    return np.clip(image, 0.0, 1.0), mask


def generate_synthetic(config, out_dir: str | Path) -> Path:
    """Write images, masks, labels.txt and classes.txt; labels are derived from the final masks."""
    if config.num_classes > len(CLASS_NAMES) or config.num_classes < 1:
        raise ValueError(f"num_classes must lie in [1, {len(CLASS_NAMES)}], got {config.num_classes}")
    out_dir = Path(out_dir)
    try:
        (out_dir / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
        (out_dir / MASKS_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot write synthetic dataset to {out_dir}: {e}") from e

    rng = np.random.default_rng(config.seed)
    lines = []
    for i in range(config.n_images):
        sample_id = f"syn_{i:05d}"
        image, mask = render_sample(config, rng)
        present = sorted(int(v) - 1 for v in np.unique(mask) if v > 0)
        write_image(out_dir / IMAGES_DIR / f"{sample_id}.png", torch.from_numpy(image.astype(np.float32)))
        write_mask(out_dir / MASKS_DIR / f"{sample_id}.png", mask)
        lines.append(f"{sample_id} {','.join(str(c) for c in present)}")

    (out_dir / LABELS_FILE).write_text("\n".join(lines) + "\n")
    (out_dir / CLASSES_FILE).write_text("\n".join(CLASS_NAMES[: config.num_classes]) + "\n")
    logger.info(f"Generated {config.n_images} synthetic samples in {out_dir}")
    return out_dir
