from dataclasses import dataclass

SCHEDULE_NAMES = ("lambda_re", "lambda_cse", "lambda_noc", "lr_decay")


def _lerp(start: float, end: float, frac: float) -> float:
    # Exact at both endpoints, unlike start + (end - start) * frac
    return start * (1.0 - frac) + end * frac


@dataclass(frozen=True)
class ScheduleSet:
    total_steps: int
    re_max: float = 4.0
    re_ramp_fraction: float = 0.5
    cse_start: float = 0.3
    cse_end: float = 1.0
    noc_start: float = 0.0
    noc_end: float = 1.0
    k_noc: int = 1
    delta_noc: float = 0.2
    smoothing_eps: float = 0.1

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.k_noc < 1:
            raise ValueError(f"k_noc must be >= 1, got {self.k_noc}")
        if not 0 < self.delta_noc < 1:
            raise ValueError(f"delta_noc must lie in (0, 1), got {self.delta_noc}")
        if not 0 <= self.smoothing_eps < 0.5:
            raise ValueError(f"smoothing_eps must lie in [0, 0.5), got {self.smoothing_eps}")

    @classmethod
    def from_config(cls, config, total_steps: int) -> "ScheduleSet":
        return cls(
            total_steps=total_steps,
            re_max=config.re_max,
            re_ramp_fraction=config.re_ramp_fraction,
            cse_start=config.cse_start,
            cse_end=config.cse_end,
            noc_start=config.noc_start,
            noc_end=config.noc_end,
            k_noc=config.k_noc,
            delta_noc=config.delta_noc,
            smoothing_eps=config.smoothing_eps,
        )

    def value(self, name: str, step: int) -> float:
        return schedule_value(self, name, step)


def schedule_value(sched: ScheduleSet, name: str, step: int) -> float:
    """
    Piecewise-linear schedules:
      lambda_re   0 -> re_max over the first re_ramp_fraction of training, then flat
      lambda_cse  cse_start -> cse_end over all steps
      lambda_noc  noc_start -> noc_end over all steps
      lr_decay    1 -> 0 over all steps (multiplier of the base learning rate)
    """
    if name not in SCHEDULE_NAMES:
        raise ValueError(f"Unknown schedule '{name}'; expected one of {SCHEDULE_NAMES}")
    total = sched.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")

    frac = step / total if total else 1.0
    if name == "lambda_re":
        ramp = sched.re_ramp_fraction * total
        return sched.re_max * (min(step / ramp, 1.0) if ramp > 0 else 1.0)
    if name == "lambda_cse":
        return _lerp(sched.cse_start, sched.cse_end, frac)
    if name == "lambda_noc":
        return _lerp(sched.noc_start, sched.noc_end, frac)
    return _lerp(1.0, 0.0, frac)


def effective_noc_lr(sched: ScheduleSet, base_lr: float, step: int) -> float:
    """lambda_noc scales the noc loss, so its effective step size is lr(step) * lambda_noc(step)."""
    return base_lr * schedule_value(sched, "lr_decay", step) * schedule_value(sched, "lambda_noc", step)
