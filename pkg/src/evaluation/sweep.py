import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402

from src.cams.core import resize_maps  # noqa: E402
from src.cams.io import SUFFIX, cams_path, load_cams  # noqa: E402
from src.datasets.masks import read_mask  # noqa: E402
from src.evaluation.metrics import ConfusionMatrix  # noqa: E402
from src.validation import DataError, ensure_open_interval  # noqa: E402

logger = logging.getLogger(__name__)

SWEEP_CSV = "sweep.csv"
SWEEP_PLOT = "sweep.png"


def decide(prior: np.ndarray, delta: float) -> np.ndarray:
    """Background where max_c prior < delta, else argmax + 1."""
    delta = ensure_open_interval(delta, "delta_bg")
    peak = prior.max(axis=0)
    labels = prior.argmax(axis=0).astype(np.uint8) + 1
    labels[peak < delta] = 0
    return labels


def parse_deltas(text: str) -> list[float]:
    """'0.05:0.95:0.05' -> [0.05, 0.1, ..., 0.95]; a comma list is also accepted."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError(f"delta step must be > 0, got {step}")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return [float(v) for v in text.split(",") if v.strip()]


def _load_pair(priors_dir: Path, gt_dir: Path, sample_id: str) -> tuple[np.ndarray, np.ndarray]:
    gt_path = gt_dir / f"{sample_id}.png"
    if not gt_path.exists():
        raise DataError(f"Missing ground-truth mask for sample '{sample_id}' in {gt_dir}")
    gt = read_mask(gt_path)
    prior = load_cams(cams_path(priors_dir, sample_id))
    if prior.shape[-2:] != gt.shape:
        prior = resize_maps(torch.from_numpy(prior), gt.shape).numpy()
    return prior, gt


def _sample_ids(priors_dir: Path, ids: Optional[list[str]]) -> list[str]:
    if ids is None:
        ids = sorted(p.stem for p in priors_dir.glob(f"*{SUFFIX}"))
    if not ids:
        raise DataError(f"No priors found in {priors_dir}")
    return ids


def evaluate_priors(
    priors_dir: str | Path,
    gt_dir: str | Path,
    num_classes: int,
    delta: float,
    ids: Optional[list[str]] = None,
) -> ConfusionMatrix:
    """Confusion matrix of the priors under one background threshold."""
    priors_dir, gt_dir = Path(priors_dir), Path(gt_dir)
    conf = ConfusionMatrix(num_classes)
    for sample_id in _sample_ids(priors_dir, ids):
        prior, gt = _load_pair(priors_dir, gt_dir, sample_id)
        conf.accumulate(decide(prior, delta), gt)
    return conf


def threshold_sweep(
    priors_dir: str | Path,
    gt_dir: str | Path,
    thresholds: Sequence[float],
    num_classes: int,
    out_dir: Optional[str | Path] = None,
    ids: Optional[list[str]] = None,
) -> pd.DataFrame:
    """
    mIoU of the priors for every background threshold in one pass over the
    data. With `out_dir`, writes sweep.csv (delta,miou) and sweep.png.
    """
    if not thresholds:
        raise ValueError("threshold_sweep: no thresholds given")
    deltas = [ensure_open_interval(d, "delta_bg") for d in thresholds]
    priors_dir, gt_dir = Path(priors_dir), Path(gt_dir)

    matrices = [ConfusionMatrix(num_classes) for _ in deltas]
    for sample_id in _sample_ids(priors_dir, ids):
        prior, gt = _load_pair(priors_dir, gt_dir, sample_id)
        for delta, conf in zip(deltas, matrices):
            conf.accumulate(decide(prior, delta), gt)

    scores = []
    for conf in matrices:
        _, mean = conf.miou()
        scores.append(np.nan if mean is None else mean)
    curve = pd.DataFrame({"delta": deltas, "miou": scores})

    best = curve.loc[curve["miou"].idxmax()] if curve["miou"].notna().any() else None
    if best is not None:
        logger.info(f"Threshold sweep: best delta_bg={best['delta']:.2f} mIoU={best['miou']:.2f}")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        curve.to_csv(out_dir / SWEEP_CSV, index=False)
        plot_sweep(curve, out_dir / SWEEP_PLOT)
    return curve


def plot_sweep(curve: pd.DataFrame, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(curve["delta"], curve["miou"], marker="o", markersize=3)
    ax.set_xlabel("background threshold")
    ax.set_ylabel("mIoU (%)")
    ax.set_xlim(0, 1)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
