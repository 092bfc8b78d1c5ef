"""
Classification-side objectives: smoothed multi-label soft margin, Puzzle
reconstruction, class-specific soft erasing and hard erasing for noc.

Every loss is a mean so that lambda values carry over between batch sizes.
"""

import logging
from typing import Optional

import torch
import torch.nn.functional as F

from src.cams.core import gap_logits, resize_maps
from src.models import LossReport
from src.objectives.schedules import ScheduleSet, schedule_value
from src.validation import ensure_open_interval, ensure_same_shape, ensure_unit_interval

logger = logging.getLogger(__name__)


def smooth_targets(targets: torch.Tensor, eps: float) -> torch.Tensor:
    return targets * (1.0 - eps) + eps / 2.0


def soft_margin_loss(logits: torch.Tensor, targets: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    """Mean over B*C of -[t' log s(z) + (1 - t') log s(-z)], t' = t(1 - eps) + eps/2."""
    ensure_same_shape(logits, targets, ("logits", "targets"))
    if not 0 <= eps < 0.5:
        raise ValueError(f"smoothing eps must lie in [0, 0.5), got {eps}")
    if bool(torch.isnan(logits).any()):
        raise ValueError("soft_margin_loss: NaN logits")
    t = smooth_targets(targets.to(logits.dtype), eps)
    loss = -(t * F.logsigmoid(logits) + (1.0 - t) * F.logsigmoid(-logits))
    return loss.mean()


def erase_target(y: torch.Tensor, r) -> torch.Tensor:
    """y with class r removed; r is an int for [C] vectors or one index per row for [B, C]."""
    out = y.clone()
    if y.dim() == 1:
        r = int(r)
        if y[r] <= 0:
            raise ValueError(f"erase_target: class {r} is not present in the label vector")
        out[r] = 0
        return out

    rows = torch.arange(y.shape[0])
    r = torch.as_tensor(r, dtype=torch.long)
    missing = y[rows, r] <= 0
    if bool(missing.any()):
        bad = int(torch.nonzero(missing)[0])
        raise ValueError(f"erase_target: class {int(r[bad])} not present in sample {bad}")
    out[rows, r] = 0
    return out


def _upsample_psi(psi_r: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    # [h,w] -> [1,H,W]; [B,h,w] -> [B,1,H,W]
    return resize_maps(psi_r.unsqueeze(-3), size)


def _blend(x: torch.Tensor, erased: torch.Tensor, fill: Optional[torch.Tensor]) -> torch.Tensor:
    if fill is None:
        return x * (1.0 - erased)
    return x * (1.0 - erased) + fill.to(x.device, x.dtype) * erased


def cse_soft_mask(x: torch.Tensor, psi_r: torch.Tensor, fill: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    x * (1 - psi_r), psi_r bilinearly upsampled to the image size. With `fill`
    (broadcastable to x, e.g. [3, 1, 1]) erased pixels fade to that color
    instead of black.
    """
    ensure_unit_interval(psi_r, "psi_r")
    return _blend(x, _upsample_psi(psi_r, tuple(x.shape[-2:])), fill)


def noc_hard_mask(
    x: torch.Tensor, psi_r: torch.Tensor, delta_noc: float, fill: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Replace every pixel whose upsampled psi_r exceeds delta_noc by `fill` (zero by default)."""
    ensure_open_interval(delta_noc, "delta_noc")
    ensure_unit_interval(psi_r, "psi_r")
    erased = (_upsample_psi(psi_r, tuple(x.shape[-2:])) > delta_noc).to(x.dtype)
    return _blend(x, erased, fill)


def reconstruction_l1(A: torch.Tensor, A_re: torch.Tensor, y: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean |A - A_re| over raw maps; with `y`, absent classes contribute zero."""
    ensure_same_shape(A, A_re, ("A", "A_re"))
    diff = (A - A_re).abs()
    if y is not None:
        diff = diff * (y > 0).to(diff.dtype)[..., None, None]
    return diff.mean()


def poc_loss(
    A: torch.Tensor,
    A_re: Optional[torch.Tensor],
    A_oc: Optional[torch.Tensor],
    y: torch.Tensor,
    r: Optional[torch.Tensor],
    step: int,
    sched: ScheduleSet,
    restrict_re_to_labels: bool = True,
) -> tuple[torch.Tensor, LossReport]:
    """
    cls(p, y) + cls(p_re, y) + lambda_re |A - A_re| + lambda_cse cls(p_oc, y minus r).

    Terms whose maps are None are left out (vanilla: A only; Puzzle: no A_oc).
    Returns the differentiable total and its per-component report.
    """
    eps = sched.smoothing_eps
    terms: dict[str, torch.Tensor] = {"cls": soft_margin_loss(gap_logits(A), y, eps)}
    weights: dict[str, float] = {"cls": 1.0}

    if A_re is not None:
        terms["re_cls"] = soft_margin_loss(gap_logits(A_re), y, eps)
        terms["re"] = reconstruction_l1(A, A_re, y if restrict_re_to_labels else None)
        weights["re_cls"] = 1.0
        weights["re"] = schedule_value(sched, "lambda_re", step)

    if A_oc is not None:
        if r is None:
            raise ValueError("poc_loss: A_oc given without the erased classes r")
        terms["cse"] = soft_margin_loss(gap_logits(A_oc), erase_target(y, r), eps)
        weights["cse"] = schedule_value(sched, "lambda_cse", step)

    total = sum(weights[name] * value for name, value in terms.items())
    report = LossReport.from_components({k: float(v.detach()) for k, v in terms.items()}, weights)
    return total, report


def noc_loss(A_noc: torch.Tensor, y: torch.Tensor, sched: ScheduleSet, step: int) -> torch.Tensor:
    """lambda_noc(step) * cls(p_noc, y)."""
    weight = schedule_value(sched, "lambda_noc", step)
    return weight * soft_margin_loss(gap_logits(A_noc), y, sched.smoothing_eps)
