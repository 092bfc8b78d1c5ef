import dataclasses
import logging
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from src.config import PipelineConfig
from src.datasets.voc import MASKS_DIR
from src.evaluation.sweep import evaluate_priors
from src.training.trainer import PRIORS_DIR, train
from src.validation import DataError

logger = logging.getLogger(__name__)

COMPARISON_CSV = "comparison.csv"
COMPARED_MODES = ("vanilla", "p_oc", "p_noc")


def compare_modes(
    dataset,
    config: PipelineConfig,
    seeds: Sequence[int],
    out_dir: str | Path,
    eval_dataset=None,
) -> pd.DataFrame:
    """
    Train vanilla, p_oc and p_noc for every seed, score their priors at
    evaluation.delta_bg and write comparison.csv: one row per (mode, seed)
    followed by the seed-averaged mean of each mode.

    The vanilla run of a seed is also the ordinary classifier of the p_oc
    and p_noc runs of that seed.
    """
    if not seeds:
        raise ValueError("compare_modes: no seeds given")
    eval_dataset = eval_dataset if eval_dataset is not None else dataset
    if not eval_dataset.has_masks:
        raise DataError(f"compare_modes needs ground-truth masks under {eval_dataset.root / MASKS_DIR}")
    out_dir = Path(out_dir)
    gt_dir = eval_dataset.root / MASKS_DIR

    rows = []
    for seed in seeds:
        seeded = dataclasses.replace(config, seed=seed, train=dataclasses.replace(config.train, seed=seed))
        oc_model = None
        for mode in COMPARED_MODES:
            run_dir = out_dir / f"{mode}-seed{seed}"
            logger.info(f"--- Compare: {mode}, seed {seed} ---")
            result = train(dataset, seeded, run_dir, mode=mode, oc_model=oc_model, priors_dataset=eval_dataset)
            if mode == "vanilla":
                oc_model = result.model
            conf = evaluate_priors(
                run_dir / PRIORS_DIR, gt_dir, eval_dataset.num_classes, config.evaluation.delta_bg, eval_dataset.ids
            )
            _, mean = conf.miou()
            rows.append({"mode": mode, "seed": str(seed), "miou": mean})
            logger.info(f"{mode} seed {seed}: prior mIoU {mean if mean is not None else float('nan'):.2f}")

    table = pd.DataFrame(rows)
    means = table.groupby("mode", sort=False)["miou"].mean().reset_index()
    means["seed"] = "mean"
    table = pd.concat([table, means[["mode", "seed", "miou"]]], ignore_index=True)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / COMPARISON_CSV, index=False, float_format="%.4f")

    summary = ", ".join(f"{row.mode}={row.miou:.2f}" for row in means.itertuples())
    logger.info(f"Seed-averaged prior mIoU: {summary}")
    return table
