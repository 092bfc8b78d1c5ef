from src.objectives.losses import (
    cse_soft_mask,
    erase_target,
    noc_hard_mask,
    noc_loss,
    poc_loss,
    reconstruction_l1,
    smooth_targets,
    soft_margin_loss,
)
from src.objectives.schedules import ScheduleSet, effective_noc_lr, schedule_value

__all__ = [
    "ScheduleSet",
    "cse_soft_mask",
    "effective_noc_lr",
    "erase_target",
    "noc_hard_mask",
    "noc_loss",
    "poc_loss",
    "reconstruction_l1",
    "schedule_value",
    "smooth_targets",
    "soft_margin_loss",
]
