from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator


class CamSource(str, Enum):
    MAIN = "main"
    RECONSTRUCTED = "reconstructed"
    OC = "oc"
    NOC = "noc"


class TrainMode(str, Enum):
    VANILLA = "vanilla"
    PUZZLE = "puzzle"
    P_OC = "p_oc"
    P_NOC = "p_noc"

    @property
    def uses_puzzle(self) -> bool:
        return self is not TrainMode.VANILLA

    @property
    def uses_oc(self) -> bool:
        return self in (TrainMode.P_OC, TrainMode.P_NOC)


class LossReport(BaseModel):
    """Unweighted loss components, the weights applied to them, and their weighted sum."""

    total: float
    components: dict[str, float] = {}
    weights: dict[str, float] = {}

    @model_validator(mode="after")
    def _total_matches_components(self):
        expected = sum(self.weights.get(k, 1.0) * v for k, v in self.components.items())
        if abs(expected - self.total) > 1e-6 * max(1.0, abs(expected)):
            raise ValueError(f"total {self.total} != weighted sum of components {expected}")
        return self

    @classmethod
    def from_components(cls, components: dict[str, float], weights: dict[str, float]) -> "LossReport":
        total = sum(weights.get(k, 1.0) * v for k, v in components.items())
        return cls(total=total, components=components, weights=weights)

    def as_log_fields(self, prefix: str = "") -> str:
        parts = [f"{prefix}{k}={v:.8e}" for k, v in self.components.items()]
        parts.append(f"{prefix}total={self.total:.8e}")
        return " ".join(parts)


class StepRecord(BaseModel):
    step: int
    lr: float
    f: LossReport
    noc: Optional[LossReport] = None
    noc_skipped: bool = False

    def to_line(self) -> str:
        line = f"step={self.step} lr={self.lr:.8e} {self.f.as_log_fields()}"
        if self.noc is not None:
            line += f" noc_lambda={self.noc.weights.get('noc', 0.0):.8e} {self.noc.as_log_fields('noc_')}"
        elif self.noc_skipped:
            line += " noc=skipped"
        return line


class SeedStats(BaseModel):
    sample_id: str
    unknown_fraction: float = Field(ge=0.0, le=1.0)
    unknown_fraction_priors: Optional[float] = None
    saliency_guided: bool = False


class HintPrecision(BaseModel):
    sample_id: str
    fg_precision: Optional[float] = None
    bg_precision: Optional[float] = None
    fg_pixels: int = 0
    bg_pixels: int = 0


class EvalSummary(BaseModel):
    """Scores are percentages; classes with an empty union have IoU None."""

    kind: str = "full"
    class_names: list[str]
    per_class: list[Optional[float]]
    miou: Optional[float] = None
    ignored_pixels: int = 0


class StageResult(BaseModel):
    name: str
    status: str  # "done", "skipped"
    artifacts: list[str] = []
