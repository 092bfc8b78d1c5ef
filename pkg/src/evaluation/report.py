import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

import jinja2
import numpy as np
import pandas as pd

from src.evaluation.groups import format_group_table
from src.evaluation.sweep import SWEEP_CSV, SWEEP_PLOT
from src.models import EvalSummary, StageResult

logger = logging.getLogger(__name__)

EVAL_DIR = "evaluation"
PRIORS_SUMMARY = "priors_summary.json"
MASKS_SUMMARY = "masks_summary.json"
GROUPS_CSV = "groups.csv"
STAGES_FILE = "stages.json"
SEED_STATS = "seeds/stats.csv"
REPORT_FILE = "report.html"


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "n/a"
    return f"{value:.2f}"


def _load_summary(path: Path) -> Optional[EvalSummary]:
    if not path.exists():
        return None
    return EvalSummary.model_validate_json(path.read_text())


def _seed_overview(path: Path) -> dict[str, str]:
    if not path.exists():
        return {}
    stats = pd.read_csv(path)
    overview = {
        "images": str(len(stats)),
        "mean unknown fraction": _fmt(100.0 * stats["unknown_fraction"].mean()) + " %",
    }
    if "unknown_fraction_priors" in stats and stats["unknown_fraction_priors"].notna().any():
        overview["mean unknown fraction (priors only)"] = _fmt(100.0 * stats["unknown_fraction_priors"].mean()) + " %"
        fewer = (stats["unknown_fraction"] < stats["unknown_fraction_priors"]).mean()
        overview["images with fewer unknown pixels"] = _fmt(100.0 * fewer) + " %"
    return overview


def load_stage_results(run_dir: str | Path) -> list[StageResult]:
    path = Path(run_dir) / STAGES_FILE
    if not path.exists():
        return []
    return [StageResult.model_validate(item) for item in json.loads(path.read_text())]


def render_report(run_dir: str | Path) -> Path:
    """Collect the evaluation artifacts of a run directory into report.html."""
    run_dir = Path(run_dir)
    eval_dir = run_dir / EVAL_DIR
    summaries = {
        "priors": _load_summary(eval_dir / PRIORS_SUMMARY),
        "refined masks": _load_summary(eval_dir / MASKS_SUMMARY),
    }
    available = {name: s for name, s in summaries.items() if s is not None}
    if not available:
        logger.warning(f"No evaluation summaries under {eval_dir}; report will be mostly empty")

    headline = [{"name": name, "miou": _fmt(s.miou)} for name, s in available.items()]
    per_class = []
    columns = list(available)
    if available:
        names = next(iter(available.values())).class_names
        for i, name in enumerate(names):
            per_class.append({
                "name": name,
                "values": [_fmt(s.per_class[i]) if i < len(s.per_class) else "n/a" for s in available.values()],
            })

    groups = []
    if (eval_dir / GROUPS_CSV).exists():
        table = format_group_table(pd.read_csv(eval_dir / GROUPS_CSV))
        groups = table.to_dict("records")

    best_delta = best_miou = None
    if (eval_dir / SWEEP_CSV).exists():
        curve = pd.read_csv(eval_dir / SWEEP_CSV)
        if curve["miou"].notna().any():
            best = curve.loc[curve["miou"].idxmax()]
            best_delta, best_miou = f"{best['delta']:.2f}", _fmt(best["miou"])

    env = jinja2.Environment(
        loader=jinja2.FileSystemLoader(str(Path(__file__).parent / "templates")),
        autoescape=True,
    )
    html = env.get_template("report.html").render(
        run_name=run_dir.name,
        generated=datetime.now().strftime("%Y-%m-%d %H:%M"),
        headline=headline,
        per_class=per_class,
        per_class_columns=columns,
        groups=groups,
        sweep_image=f"{EVAL_DIR}/{SWEEP_PLOT}" if (eval_dir / SWEEP_PLOT).exists() else None,
        best_delta=best_delta,
        best_miou=best_miou,
        seeds=_seed_overview(run_dir / SEED_STATS),
        stages=load_stage_results(run_dir),
    )
    path = run_dir / REPORT_FILE
    path.write_text(html)
    logger.info(f"Report written to {path}")
    return path
