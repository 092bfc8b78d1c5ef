import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import torch

from src.cams.io import SUFFIX
from src.cams.network import load_cam_network
from src.cams.priors import make_priors
from src.config import STAGES, PipelineConfig, describe_config, dump_config, load_config, resolve_seeds, validate_config
from src.datasets.synthetic import generate_synthetic
from src.datasets.voc import LABELS_FILE, MASKS_DIR, VocDataset
from src.evaluation.groups import default_groups, group_report, resolve_groups
from src.evaluation.metrics import evaluate_dirs, write_per_class_csv
from src.evaluation.report import (
    EVAL_DIR,
    GROUPS_CSV,
    MASKS_SUMMARY,
    PRIORS_SUMMARY,
    STAGES_FILE,
    render_report,
)
from src.evaluation.sweep import evaluate_priors, parse_deltas, threshold_sweep
from src.models import EvalSummary, StageResult, TrainMode
from src.refinement.refine import make_seeds, refine_dataset
from src.saliency.network import load_disentangler
from src.saliency.trainer import make_saliency, saliency_diagnostics, train_c2amh
from src.training.checkpoint import latest_checkpoint
from src.training.compare import compare_modes
from src.training.trainer import CONFIG_SNAPSHOT, MODEL_FILE, train
from src.validation import ConfigError, DataError, PipelineError, StageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_STAGE = 4

COMPLETE_MARKER = ".complete"
BACKGROUND = "background"

# Output directory of every stage, relative to the run directory
STAGE_DIRS = {
    "generate": "data",
    "train-oc": "oc",
    "train-cam": "cam",
    "make-priors": "priors",
    "train-c2amh": "c2amh",
    "make-saliency": "saliency",
    "make-seeds": "seeds",
    "refine-rw": "masks",
    "evaluate": EVAL_DIR,
    "report": ".",
}


@dataclass
class RunContext:
    config: PipelineConfig
    run_dir: Path
    priors_dir: Optional[Path] = None
    force: bool = False
    _dataset: Optional[VocDataset] = field(default=None, repr=False)

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)
        if self.priors_dir is None:
            self.priors_dir = self.stage_dir("make-priors")

    def stage_dir(self, stage: str) -> Path:
        return self.run_dir / STAGE_DIRS[stage]

    @property
    def data_root(self) -> Path:
        if self.config.dataset.source == "voc":
            return Path(self.config.dataset.root)
        return self.stage_dir("generate")

    def dataset(self) -> VocDataset:
        if self._dataset is None:
            labels = self.data_root / LABELS_FILE
            if not labels.exists():
                hint = "run the 'generate' stage first" if self.config.dataset.source == "synthetic" else "check dataset.root"
                raise StageError(f"Dataset missing: {labels} not found ({hint})")
            self._dataset = VocDataset(self.data_root)
        return self._dataset

    def gt_dataset(self) -> Optional[VocDataset]:
        dataset = self.dataset()
        return dataset if dataset.has_masks else None


def _require(path: Path, producer: str, what: str) -> Path:
    present = path.exists() and (path.is_file() or any(path.iterdir()))
    if not present:
        raise StageError(f"Missing {what} at {path}; run the '{producer}' stage first")
    return path


def _require_priors(ctx: RunContext) -> Path:
    _require(ctx.priors_dir, "make-priors", "priors")
    if not any(ctx.priors_dir.glob(f"*{SUFFIX}")):
        raise StageError(f"No {SUFFIX} priors in {ctx.priors_dir}; run the 'make-priors' stage first")
    return ctx.priors_dir


def _has_files(directory: Path, pattern: str) -> bool:
    return directory.is_dir() and any(directory.glob(pattern))


def _load_classifier(ctx: RunContext, stage: str):
    path = _require(ctx.stage_dir(stage) / MODEL_FILE, stage, "trained model")
    return load_cam_network(path, ctx.dataset().num_classes, ctx.config.network)


def _resume_point(ctx: RunContext, run_dir: Path) -> Optional[Path]:
    if ctx.force:
        return None
    ckpt = latest_checkpoint(run_dir)
    if ckpt is not None:
        logger.info(f"Resuming from {ckpt}")
    return ckpt


def stage_generate(ctx: RunContext) -> list[Path]:
    if ctx.config.dataset.source != "synthetic":
        logger.info(f"Dataset source is '{ctx.config.dataset.source}'; nothing to generate")
        return []
    out = generate_synthetic(ctx.config.dataset.synthetic, ctx.stage_dir("generate"))
    return [out]


def stage_train_oc(ctx: RunContext) -> list[Path]:
    out = ctx.stage_dir("train-oc")
    dataset = ctx.dataset()
    result = train(dataset, ctx.config, out, mode="vanilla", gt_dataset=ctx.gt_dataset(), resume=_resume_point(ctx, out))
    return [result.run_dir / MODEL_FILE]


def stage_train_cam(ctx: RunContext) -> list[Path]:
    out = ctx.stage_dir("train-cam")
    oc_model = _load_classifier(ctx, "train-oc") if TrainMode(ctx.config.train.mode).uses_oc else None
    result = train(ctx.dataset(), ctx.config, out, oc_model=oc_model, gt_dataset=ctx.gt_dataset(), resume=_resume_point(ctx, out))
    return [result.run_dir / MODEL_FILE]


def stage_make_priors(ctx: RunContext) -> list[Path]:
    model = _load_classifier(ctx, "train-cam")
    cams = ctx.config.cams
    make_priors(model, ctx.dataset(), ctx.priors_dir, cams.scales, cams.use_flip)
    return [ctx.priors_dir]


def stage_train_c2amh(ctx: RunContext) -> list[Path]:
    priors = _require_priors(ctx)
    classifier = None
    if ctx.config.c2amh.init_from_classifier:
        if (ctx.stage_dir("train-oc") / MODEL_FILE).exists():
            classifier = _load_classifier(ctx, "train-oc")
        else:
            logger.warning("No trained ordinary classifier found; disentangler starts from scratch")
    out = ctx.stage_dir("train-c2amh")
    run = train_c2amh(ctx.dataset(), priors, ctx.config.c2amh, ctx.config.network, out, classifier)
    return [run.run_dir / MODEL_FILE]


def stage_make_saliency(ctx: RunContext) -> list[Path]:
    path = _require(ctx.stage_dir("train-c2amh") / MODEL_FILE, "train-c2amh", "trained disentangler")
    model = load_disentangler(path, ctx.config.network)
    out = ctx.stage_dir("make-saliency")
    dataset = ctx.dataset()
    make_saliency(model, dataset, out)
    if dataset.has_masks and _has_files(ctx.priors_dir, f"*{SUFFIX}"):
        saliency_diagnostics(dataset, ctx.priors_dir, out, ctx.config.c2amh)
    return [out]


def stage_make_seeds(ctx: RunContext) -> list[Path]:
    priors = _require_priors(ctx)
    saliency_dir = ctx.stage_dir("make-saliency")
    use_saliency = ctx.config.refine.use_saliency
    if use_saliency and not _has_files(saliency_dir, f"*{SUFFIX}"):
        logger.warning(f"refine.use_saliency is set but {saliency_dir} holds no saliency maps; using priors only")
        use_saliency = False
    out = ctx.stage_dir("make-seeds")
    make_seeds(
        ctx.dataset(),
        priors,
        out,
        ctx.config.refine,
        saliency_dir if use_saliency else None,
        ctx.config.c2amh.delta_sal,
    )
    return [out]


def stage_refine_rw(ctx: RunContext) -> list[Path]:
    priors = _require_priors(ctx)
    seeds_dir = ctx.stage_dir("make-seeds")
    if not _has_files(seeds_dir, "*.png"):
        logger.warning(f"No seed maps in {seeds_dir}; refining from priors alone")
        seeds_dir = None
    out = ctx.stage_dir("refine-rw")
    refine_dataset(ctx.dataset(), priors, out, ctx.config.refine, seeds_dir, workers=ctx.config.threads)
    return [out]


def _with_background(groups: dict[str, list[int]]) -> dict[str, list[int]]:
    return {name: [i + 1 for i in members] for name, members in groups.items()}


def stage_evaluate(ctx: RunContext) -> list[Path]:
    priors = _require_priors(ctx)
    dataset = ctx.dataset()
    if not dataset.has_masks:
        raise DataError(f"Evaluation needs ground-truth masks under {dataset.root / MASKS_DIR}")
    gt_dir = dataset.root / MASKS_DIR
    out = ctx.stage_dir("evaluate")
    out.mkdir(parents=True, exist_ok=True)
    e = ctx.config.evaluation
    class_names = [BACKGROUND] + dataset.class_names
    written = []

    threshold_sweep(priors, gt_dir, e.sweep_deltas, dataset.num_classes, out, dataset.ids)
    conf = evaluate_priors(priors, gt_dir, dataset.num_classes, e.delta_bg, dataset.ids)
    summary = conf.summary(class_names, kind="priors")
    written.append(_write_summary(summary, out / PRIORS_SUMMARY))
    written.append(write_per_class_csv(summary, out / "per_class_priors.csv"))
    logger.info(f"Priors mIoU at delta_bg={e.delta_bg}: {summary.miou}")

    masks_dir = ctx.stage_dir("refine-rw")
    if _has_files(masks_dir, "*.png"):
        conf = evaluate_dirs(masks_dir, gt_dir, dataset.num_classes, e.workers, dataset.ids)
        summary = conf.summary(class_names, kind="masks")
        written.append(_write_summary(summary, out / MASKS_SUMMARY))
        written.append(write_per_class_csv(summary, out / "per_class_masks.csv"))
        logger.info(f"Refined masks mIoU: {summary.miou}")

    groups = resolve_groups(e.groups, dataset.class_names) if e.groups else default_groups(dataset.class_names)
    if groups:
        table = group_report(summary.per_class, _with_background(groups), class_names)
        table.to_csv(out / GROUPS_CSV, index=False, float_format="%.2f")
        written.append(out / GROUPS_CSV)
    return written


def _write_summary(summary: EvalSummary, path: Path) -> Path:
    path.write_text(summary.model_dump_json(indent=2) + "\n")
    return path


def stage_report(ctx: RunContext) -> list[Path]:
    return [render_report(ctx.run_dir)]


STAGE_FUNCS: dict[str, Callable[[RunContext], list[Path]]] = {
    "generate": stage_generate,
    "train-oc": stage_train_oc,
    "train-cam": stage_train_cam,
    "make-priors": stage_make_priors,
    "train-c2amh": stage_train_c2amh,
    "make-saliency": stage_make_saliency,
    "make-seeds": stage_make_seeds,
    "refine-rw": stage_refine_rw,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def marker_path(run_dir: Path, stage: str) -> Path:
    directory = run_dir / STAGE_DIRS[stage]
    return directory / (COMPLETE_MARKER if STAGE_DIRS[stage] != "." else f".{stage}{COMPLETE_MARKER}")


def _write_stage_results(run_dir: Path, results: list[StageResult]) -> None:
    (run_dir / STAGES_FILE).write_text(json.dumps([r.model_dump() for r in results], indent=2) + "\n")


def configure_determinism(config: PipelineConfig) -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(config.threads)


def run_stages(
    config: PipelineConfig,
    stages: Optional[list[str]] = None,
    force: bool = False,
    ctx: Optional[RunContext] = None,
) -> list[StageResult]:
    """
    Run `stages` (default: config.stages) in pipeline order. A stage whose
    output directory holds a completion marker is skipped unless `force`.
    """
    ctx = ctx or RunContext(config, Path(config.output_root))
    ctx.force = force
    run_dir = ctx.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    selected = stages if stages is not None else config.stages
    unknown = [s for s in selected if s not in STAGE_FUNCS]
    if unknown:
        raise ConfigError(f"Unknown stage(s) {unknown}; valid stages: {list(STAGES)}")

    snapshot = run_dir / CONFIG_SNAPSHOT
    text = dump_config(config)
    if snapshot.exists() and snapshot.read_text() != text and not force:
        logger.warning(f"{snapshot} differs from the current config; completed stages are still reused")
    snapshot.write_text(text)

    results = []
    for stage in (s for s in STAGES if s in selected):
        marker = marker_path(run_dir, stage)
        if marker.exists() and not force:
            logger.info(f"--- Stage: {stage} (complete, skipped) ---")
            results.append(StageResult(name=stage, status="skipped"))
            _write_stage_results(run_dir, results)
            continue

        logger.info(f"--- Stage: {stage} ---")
        try:
            artifacts = STAGE_FUNCS[stage](ctx)
        except PipelineError:
            raise
        except Exception as e:
            logger.exception(f"Stage {stage} failed")
            raise StageError(f"Stage '{stage}' failed: {e}") from e

        marker.parent.mkdir(parents=True, exist_ok=True)
        marker.write_text(f"{stage}\n")
        results.append(StageResult(
            name=stage,
            status="done",
            artifacts=[str(Path(p).relative_to(run_dir)) if Path(p).is_relative_to(run_dir) else str(p) for p in artifacts],
        ))
        _write_stage_results(run_dir, results)
    return results


def run_pipeline(config: PipelineConfig, force: bool = False) -> list[StageResult]:
    """All configured stages in order, from data generation to the HTML report."""
    logger.info(f"=== Pipeline start: {Path(config.output_root)} ===")
    results = run_stages(config, force=force)
    done = sum(r.status == "done" for r in results)
    logger.info(f"=== Pipeline complete: {done} stage(s) run, {len(results) - done} skipped ===")
    return results


def _print_summary(summary: EvalSummary) -> None:
    width = max(len(n) for n in summary.class_names)
    for name, value in zip(summary.class_names, summary.per_class):
        print(f"{name:<{width}}  {'n/a' if value is None else f'{value:6.2f}'}")
    print(f"{'mIoU':<{width}}  {'n/a' if summary.miou is None else f'{summary.miou:6.2f}'}")


def cmd_run(args, config: PipelineConfig) -> None:
    run_pipeline(config, force=args.force)


def cmd_stage(args, config: PipelineConfig) -> None:
    run_stages(config, [args.command], force=args.force)


def cmd_train(args, config: PipelineConfig) -> None:
    if args.mode:
        config.train.mode = args.mode
        validate_config(config)
    if args.data is None:
        if args.out is None and args.resume is None:
            run_stages(config, ["train-cam"], force=args.force)
            return
        dataset = RunContext(config, Path(config.output_root)).dataset()
    else:
        dataset = VocDataset(args.data)
    out = Path(args.out) if args.out else Path(config.output_root) / STAGE_DIRS["train-cam"]

    oc_model = None
    if TrainMode(config.train.mode).uses_oc:
        if not args.oc:
            raise ConfigError(f"--oc MODEL is required for mode {config.train.mode}")
        oc_model = load_cam_network(args.oc, dataset.num_classes, config.network)
    gt = dataset if dataset.has_masks else None
    train(dataset, config, out, oc_model=oc_model, gt_dataset=gt, resume=args.resume, priors_dataset=dataset)


def cmd_train_c2amh(args, config: PipelineConfig) -> None:
    ctx = RunContext(config, Path(config.output_root), priors_dir=Path(args.hints_from) if args.hints_from else None)
    run_stages(config, ["train-c2amh"], force=args.force, ctx=ctx)


def cmd_evaluate(args, config: PipelineConfig) -> None:
    if args.pred is None:
        run_stages(config, ["evaluate"], force=args.force)
        return
    if args.gt is None:
        raise ConfigError("--gt is required with --pred")
    names = _class_names(args, config)
    conf = evaluate_dirs(args.pred, args.gt, len(names), config.evaluation.workers)
    summary = conf.summary([BACKGROUND] + names)
    if args.out:
        write_per_class_csv(summary, Path(args.out) / "per_class.csv")
    _print_summary(summary)


def cmd_sweep(args, config: PipelineConfig) -> None:
    deltas = parse_deltas(args.deltas) if args.deltas else config.evaluation.sweep_deltas
    priors = Path(args.priors) if args.priors else Path(config.output_root) / STAGE_DIRS["make-priors"]
    if args.gt:
        gt, num_classes = Path(args.gt), len(_class_names(args, config))
    else:
        dataset = RunContext(config, Path(config.output_root)).dataset()
        gt, num_classes = dataset.root / MASKS_DIR, dataset.num_classes
    out = Path(args.out) if args.out else Path(config.output_root) / EVAL_DIR
    curve = threshold_sweep(priors, gt, deltas, num_classes, out)
    print(curve.to_string(index=False, float_format=lambda v: f"{v:.2f}"))


def _class_names(args, config: PipelineConfig) -> list[str]:
    if args.classes:
        return [f"class_{c}" for c in range(args.classes)]
    return RunContext(config, Path(config.output_root)).dataset().class_names


def cmd_report(args, config: PipelineConfig) -> None:
    if args.run_dir:
        render_report(args.run_dir)
    else:
        run_stages(config, ["report"], force=True)


def cmd_compare(args, config: PipelineConfig) -> None:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    ctx = RunContext(config, Path(config.output_root))
    if config.dataset.source == "synthetic":
        run_stages(config, ["generate"], ctx=ctx)
    out = Path(args.out) if args.out else ctx.run_dir / "compare"
    table = compare_modes(ctx.dataset(), config, seeds, out)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults are used when omitted)")
    common.add_argument("--verbose", action="store_true", help="DEBUG logging")
    common.add_argument("--force", action="store_true", help="rerun stages that are already complete")
    common.add_argument("--seed", type=int, help="global seed; section seeds are derived from it")

    parser = argparse.ArgumentParser(
        prog="pnoc",
        description="Weakly supervised segmentation priors: CAM training, saliency, refinement, evaluation.",
        epilog="Config keys (dotted name, type, default):\n" + describe_config(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="run every configured stage").set_defaults(func=cmd_run)
    for stage, text in [
        ("generate", "write the synthetic dataset"),
        ("train-oc", "train the ordinary classifier"),
        ("make-priors", "TTA priors from the trained CAM network"),
        ("make-saliency", "saliency maps from the trained disentangler"),
        ("make-seeds", "seed maps from priors (and saliency)"),
        ("refine-rw", "random-walk refinement into final masks"),
    ]:
        sub.add_parser(stage, parents=[common], help=text).set_defaults(func=cmd_stage)

    p = sub.add_parser("train", parents=[common], help="train a CAM network")
    p.add_argument("--mode", choices=[m.value for m in TrainMode])
    p.add_argument("--data", help="dataset root in VOC layout")
    p.add_argument("--out", help="run directory")
    p.add_argument("--oc", help="ordinary classifier weights (p_oc, p_noc)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-c2amh", parents=[common], help="train the hint-guided disentangler")
    p.add_argument("--hints-from", help="priors directory the hints are taken from")
    p.set_defaults(func=cmd_train_c2amh)

    p = sub.add_parser("evaluate", parents=[common], help="score priors and masks, or one prediction directory")
    p.add_argument("--pred", help="directory of predicted masks")
    p.add_argument("--gt", help="directory of ground-truth masks")
    p.add_argument("--classes", type=int, help="number of foreground classes (default: from the dataset)")
    p.add_argument("--out", help="directory for per_class.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="prior mIoU over background thresholds")
    p.add_argument("--priors")
    p.add_argument("--gt")
    p.add_argument("--deltas", help="start:stop:step or a comma list")
    p.add_argument("--classes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="render report.html")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", parents=[common], help="vanilla vs p_oc vs p_noc over several seeds")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def prepare_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else validate_config(PipelineConfig())
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
        config.train.seed = None
        config.c2amh.seed = None
        config.dataset.synthetic.seed = None
    return resolve_seeds(config)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        config = prepare_config(args)
        configure_determinism(config)
        args.func(args, config)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except PipelineError as e:
        logger.error(f"{e}")
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
