from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from src.validation import ConfigError

MODES = ("vanilla", "puzzle", "p_oc", "p_noc")
AUGMENT_POLICIES = ("color_jitter", "none")
STAGES = (
    "generate",
    "train-oc",
    "train-cam",
    "make-priors",
    "train-c2amh",
    "make-saliency",
    "make-seeds",
    "refine-rw",
    "evaluate",
    "report",
)


@dataclass
class SyntheticConfig:
    n_images: int = 200
    num_classes: int = 5
    image_size: int = 64
    min_shapes: int = 1
    max_shapes: int = 3
    # Probability that an image receives more than one class.
    # 0 makes every image single-class.
    cooccurrence: float = 0.5
    # Probability that disc and triangle are drawn together when a disc is drawn
    pair_rate: float = 0.7
    noise: float = 0.06
    occlusion: bool = True
    seed: int | None = None


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # "synthetic" or "voc"
    # VOC-layout root; for synthetic data the generator writes to <output_root>/data
    root: str = ""
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class NetworkConfig:
    channels: list[int] = field(default_factory=lambda: [16, 32, 64, 64])
    # Number of leading stride-2 blocks; CAM stride is 2**downsample
    downsample: int = 2
    groups: int = 4


@dataclass
class ScheduleConfig:
    re_max: float = 4.0
    # Fraction of training over which lambda_re ramps up (then stays at re_max)
    re_ramp_fraction: float = 0.5
    cse_start: float = 0.3
    cse_end: float = 1.0
    noc_start: float = 0.0
    noc_end: float = 1.0
    k_noc: int = 1
    delta_noc: float = 0.2
    smoothing_eps: float = 0.1


@dataclass
class TrainConfig:
    mode: str = "p_noc"
    epochs: int = 15
    lr_scratch: float = 0.1
    lr_pretrained: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 8
    # Apply the optimizer update every `accumulation` batches
    accumulation: int = 1
    crop_size: int = 64
    scale_min: float = 0.75
    scale_max: float = 1.25
    augment: str = "color_jitter"
    hflip: bool = True
    # Restrict |A - A_re| to classes present in the label vector
    restrict_re_to_labels: bool = True
    checkpoint_every: int = 0
    # p_oc and p_noc: start f from the ordinary classifier and train it at lr_pretrained
    init_from_oc: bool = True
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int | None = None


@dataclass
class CamConfig:
    scales: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    use_flip: bool = True


@dataclass
class C2amConfig:
    alpha: float = 0.25
    lambda_h: float = 1.0
    delta_fg: float = 0.4
    delta_bg: float = 0.1
    delta_sal: float = 0.5
    batch_size: int = 32
    epochs: int = 10
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    crop_size: int = 64
    scale_min: float = 0.75
    scale_max: float = 1.25
    augment: str = "color_jitter"
    hflip: bool = True
    # Train with foreground hints from the priors; false gives plain unanchored disentangling
    use_hints: bool = True
    # Start the disentangler trunk from the trained vanilla classifier
    init_from_classifier: bool = True
    seed: int | None = None


@dataclass
class RefineConfig:
    delta_bg: float = 0.1
    delta_fg: float = 0.4
    use_saliency: bool = True
    radius: int = 5
    # None: median within-radius feature distance
    sigma: float | None = None
    beta: float = 8.0
    t_iters: int = 256
    crf_plugin: str | None = None


@dataclass
class EvalConfig:
    delta_bg: float = 0.25
    sweep_deltas: list[float] = field(
        default_factory=lambda: [round(0.05 * i, 2) for i in range(1, 20)]
    )
    common_size: int = 64
    workers: int = 1
    # Group name -> class names; empty uses the dataset's default groups
    groups: dict[str, list[str]] = field(default_factory=dict)


@dataclass
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cams: CamConfig = field(default_factory=CamConfig)
    c2amh: C2amConfig = field(default_factory=C2amConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    stages: list[str] = field(default_factory=lambda: list(STAGES))
    output_root: str = "runs/default"
    seed: int = 0
    threads: int = 1


def _coerce(value, hint, path: str):
    """Convert a YAML value to the annotated type, rejecting mismatches."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a section, got {type(value).__name__}")
        return _build(hint, value, path)

    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        non_null = [a for a in args if a is not type(None)]
        return _coerce(value, non_null[0], path)

    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]

    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return {str(k): _coerce(v, args[1], f"{path}.{k}") for k, v in value.items()}

    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, raw: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        dotted = ", ".join(f"{path}.{k}".lstrip(".") for k in unknown)
        raise ConfigError(f"Unknown config key(s): {dotted}")
    kwargs = {
        key: _coerce(value, hints[key], f"{path}.{key}".lstrip("."))
        for key, value in raw.items()
    }
    return cls(**kwargs)


def validate_config(config: PipelineConfig) -> PipelineConfig:
    """Check cross-field invariants; raises ConfigError on the first violation."""
    t = config.train
    s = t.schedule
    if t.mode not in MODES:
        raise ConfigError(f"train.mode must be one of {MODES}, got '{t.mode}'")
    if t.lr_scratch <= 0 or t.lr_pretrained <= 0:
        raise ConfigError("train.lr_scratch and train.lr_pretrained must be > 0")
    if t.accumulation < 1:
        raise ConfigError("train.accumulation must be >= 1")
    if t.batch_size < 1 or t.epochs < 1:
        raise ConfigError("train.batch_size and train.epochs must be >= 1")
    if t.augment not in AUGMENT_POLICIES:
        raise ConfigError(f"train.augment must be one of {AUGMENT_POLICIES}")
    if t.crop_size < 8 or t.crop_size % 2:
        raise ConfigError("train.crop_size must be even and >= 8")
    if not 0 < t.scale_min <= t.scale_max:
        raise ConfigError("train.scale_min/scale_max must satisfy 0 < min <= max")
    if t.mode == "p_noc" and s.k_noc < 1:
        raise ConfigError("train.schedule.k_noc must be >= 1 for mode p_noc")
    if not 0 < s.delta_noc < 1:
        raise ConfigError("train.schedule.delta_noc must lie in (0, 1)")
    if not 0 <= s.smoothing_eps < 0.5:
        raise ConfigError("train.schedule.smoothing_eps must lie in [0, 0.5)")
    if not 0 < s.re_ramp_fraction <= 1:
        raise ConfigError("train.schedule.re_ramp_fraction must lie in (0, 1]")

    if not config.cams.scales or any(x <= 0 for x in config.cams.scales):
        raise ConfigError("cams.scales must be non-empty and positive")

    c = config.c2amh
    if not 0 < c.delta_bg < c.delta_fg < 1:
        raise ConfigError("c2amh thresholds must satisfy 0 < delta_bg < delta_fg < 1")
    if c.alpha <= 0 or c.lambda_h < 0:
        raise ConfigError("c2amh.alpha must be > 0 and c2amh.lambda_h >= 0")
    if not 0 < c.delta_sal < 1:
        raise ConfigError("c2amh.delta_sal must lie in (0, 1)")
    if c.batch_size < 2:
        raise ConfigError("c2amh.batch_size must be >= 2 (rank weights compare images within a batch)")
    if c.augment not in AUGMENT_POLICIES:
        raise ConfigError(f"c2amh.augment must be one of {AUGMENT_POLICIES}")
    if c.crop_size < 8 or c.crop_size % 2 or not 0 < c.scale_min <= c.scale_max:
        raise ConfigError("c2amh.crop_size must be even and >= 8 with 0 < scale_min <= scale_max")

    r = config.refine
    if not 0 < r.delta_bg < r.delta_fg < 1:
        raise ConfigError("refine thresholds must satisfy 0 < delta_bg < delta_fg < 1")
    if r.radius < 1 or r.beta < 1 or r.t_iters < 0:
        raise ConfigError("refine.radius >= 1, refine.beta >= 1 and refine.t_iters >= 0 required")
    if r.sigma is not None and r.sigma <= 0:
        raise ConfigError("refine.sigma must be > 0")

    e = config.evaluation
    if any(not 0 < d < 1 for d in e.sweep_deltas) or not 0 < e.delta_bg < 1:
        raise ConfigError("evaluation thresholds must lie in (0, 1)")

    d = config.dataset
    if d.source not in ("synthetic", "voc"):
        raise ConfigError(f"dataset.source must be 'synthetic' or 'voc', got '{d.source}'")
    if d.source == "voc" and not d.root:
        raise ConfigError("dataset.root is required for dataset.source=voc")
    syn = d.synthetic
    if syn.image_size < 8 or syn.image_size % 2:
        raise ConfigError("dataset.synthetic.image_size must be even and >= 8")
    if not 1 <= syn.min_shapes <= syn.max_shapes:
        raise ConfigError("dataset.synthetic requires 1 <= min_shapes <= max_shapes")

    unknown = [stage for stage in config.stages if stage not in STAGES]
    if unknown:
        raise ConfigError(f"Unknown stage(s) {unknown}; valid stages: {list(STAGES)}")
    return config


def resolve_seeds(config: PipelineConfig) -> PipelineConfig:
    """Derive unset section seeds from the global seed."""
    if config.train.seed is None:
        config.train.seed = config.seed
    if config.c2amh.seed is None:
        config.c2amh.seed = config.seed + 1
    if config.dataset.synthetic.seed is None:
        config.dataset.synthetic.seed = config.seed + 2
    return config


def config_from_dict(raw: dict | None) -> PipelineConfig:
    if not raw:
        return validate_config(PipelineConfig())
    if not isinstance(raw, dict):
        raise ConfigError("Config root must be a mapping")
    return validate_config(_build(PipelineConfig, raw))


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed config {path}: {e}") from e
    return config_from_dict(raw)


def dump_config(config: PipelineConfig) -> str:
    """Canonical text form; load_config on it yields an equal config."""
    return yaml.safe_dump(dataclasses.asdict(config), sort_keys=True, default_flow_style=False)


def describe_config() -> str:
    """One line per key: dotted name, type and default."""
    lines = []

    def walk(cls, instance, prefix: str):
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            value = getattr(instance, f.name)
            name = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(hints[f.name]):
                walk(hints[f.name], value, f"{name}.")
            else:
                type_name = getattr(hints[f.name], "__name__", str(hints[f.name]))
                lines.append(f"  {name} ({type_name}) = {value!r}")

    walk(PipelineConfig, PipelineConfig(), "")
    return "\n".join(lines)
