from src.evaluation.estimate import estimate_epoch_miou
from src.evaluation.groups import VOC_CLASSES, VOC_GROUPS, default_groups, group_report, resolve_groups
from src.evaluation.metrics import ConfusionMatrix, accumulate, evaluate_dirs, miou, write_per_class_csv
from src.evaluation.report import render_report
from src.evaluation.sweep import decide, evaluate_priors, parse_deltas, threshold_sweep

__all__ = [
    "ConfusionMatrix",
    "VOC_CLASSES",
    "VOC_GROUPS",
    "accumulate",
    "decide",
    "default_groups",
    "estimate_epoch_miou",
    "evaluate_dirs",
    "evaluate_priors",
    "group_report",
    "miou",
    "parse_deltas",
    "render_report",
    "resolve_groups",
    "threshold_sweep",
    "write_per_class_csv",
]
