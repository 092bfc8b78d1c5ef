import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import torch

from src.cams.core import resize_maps
from src.cams.io import cams_path, load_cams
from src.config import RefineConfig
from src.datasets.masks import read_mask, write_mask
from src.models import SeedStats
from src.refinement.crf import crf_refine
from src.refinement.random_walk import build_affinity, random_walk
from src.refinement.seeds import UNKNOWN, SeedMap, seeds_from_priors, seeds_with_saliency

logger = logging.getLogger(__name__)

SEED_STATS_CSV = "stats.csv"


def with_background(prior: np.ndarray) -> np.ndarray:
    """Prepend the background channel clamp(1 - max_c prior, 0, 1): [C, h, w] -> [C+1, h, w]."""
    prior = np.asarray(prior, dtype=np.float64)
    background = np.clip(1.0 - prior.max(axis=0), 0.0, 1.0)
    return np.concatenate([background[np.newaxis], prior], axis=0)


def anchor_to_seeds(prior_bg: np.ndarray, seeds: SeedMap) -> np.ndarray:
    """Replace the distribution of every confident seed pixel by the one-hot of its label."""
    labels = seeds.labels
    if labels.shape != prior_bg.shape[1:]:
        raise ValueError(f"seed map {labels.shape} does not match prior {prior_bg.shape[1:]}")
    out = prior_bg.copy()
    ys, xs = np.nonzero(labels != UNKNOWN)
    values = labels[ys, xs].astype(np.int64)
    if values.size and values.max() >= out.shape[0]:
        raise ValueError(f"seed label {int(values.max())} exceeds {out.shape[0] - 1} classes")
    out[:, ys, xs] = 0.0
    out[values, ys, xs] = 1.0
    return out


def refine_sample(
    image,
    prior: np.ndarray,
    seeds: Optional[SeedMap],
    config: RefineConfig,
) -> np.ndarray:
    """Affinity from the image, seed anchoring, random walk, CRF plugin, argmax -> uint8 mask."""
    image = image.numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    size = prior.shape[-2:]
    if image.shape[-2:] != size:
        image = resize_maps(torch.from_numpy(image.astype(np.float32)), size).numpy()

    probs = with_background(prior)
    if seeds is not None:
        probs = anchor_to_seeds(probs, seeds)
    graph = build_affinity(image, config.radius, config.sigma)
    probs = random_walk(probs, graph, config.beta, config.t_iters)
    probs = crf_refine(image, probs, config.crf_plugin)
    return probs.argmax(axis=0).astype(np.uint8)


def _saliency_for(saliency_dir: Path, sample_id: str, size: tuple[int, int]) -> np.ndarray:
    saliency = load_cams(cams_path(saliency_dir, sample_id))
    if saliency.shape[-2:] != size:
        saliency = resize_maps(torch.from_numpy(saliency), size).numpy()
    return np.clip(saliency[0], 0.0, 1.0)


def make_seeds(
    dataset,
    priors_dir: str | Path,
    out_dir: str | Path,
    config: RefineConfig,
    saliency_dir: Optional[str | Path] = None,
    delta_sal: float = 0.5,
) -> pd.DataFrame:
    """
    Write one seed mask per sample and stats.csv with the unknown-pixel
    fraction of the priors-only rule and, when saliency is used, of the
    saliency-guided rule.
    """
    priors_dir, out_dir = Path(priors_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    guided = saliency_dir is not None and config.use_saliency

    rows = []
    for sample_id in dataset.ids:
        prior = load_cams(cams_path(priors_dir, sample_id))
        from_priors = seeds_from_priors(prior, config.delta_bg, config.delta_fg)
        seeds = from_priors
        if guided:
            saliency = _saliency_for(Path(saliency_dir), sample_id, prior.shape[-2:])
            seeds = seeds_with_saliency(prior, saliency, config.delta_fg, delta_sal, config.delta_bg)
        write_mask(out_dir / f"{sample_id}.png", seeds.labels)
        rows.append(SeedStats(
            sample_id=sample_id,
            unknown_fraction=seeds.unknown_fraction,
            unknown_fraction_priors=from_priors.unknown_fraction if guided else None,
            saliency_guided=guided,
        ))

    stats = pd.DataFrame([row.model_dump() for row in rows])
    stats.to_csv(out_dir / SEED_STATS_CSV, index=False)
    logger.info(
        f"Seeds for {len(rows)} images ({'saliency-guided' if guided else 'priors only'}), "
        f"mean unknown fraction {stats['unknown_fraction'].mean():.3f}"
    )
    return stats


def refine_dataset(
    dataset,
    priors_dir: str | Path,
    out_dir: str | Path,
    config: RefineConfig,
    seeds_dir: Optional[str | Path] = None,
    workers: int = 1,
) -> list[Path]:
    priors_dir, out_dir = Path(priors_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def refine_one(index: int) -> Path:
        sample = dataset[index]
        prior = load_cams(cams_path(priors_dir, sample.id))
        seeds = None
        if seeds_dir is not None:
            seeds = SeedMap(read_mask(Path(seeds_dir) / f"{sample.id}.png"))
        mask = refine_sample(sample.image, prior, seeds, config)
        return write_mask(out_dir / f"{sample.id}.png", mask)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            written = list(pool.map(refine_one, range(len(dataset))))
    else:
        written = [refine_one(i) for i in range(len(dataset))]
    logger.info(f"Refined {len(written)} masks into {out_dir}")
    return written
