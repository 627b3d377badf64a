"""
Command-line entry point.

    ikd-mil generate-data --config run.yaml --out runs/demo
    ikd-mil train-mil     --config run.yaml --out runs/demo
    ikd-mil fit-fusion    --config run.yaml --out runs/demo
    ikd-mil distill       --config run.yaml --out runs/demo
    ikd-mil evaluate      --config run.yaml --out runs/demo
    ikd-mil report        --config run.yaml --out runs/demo [--runs DIR ...] [--thresholds T ...]
    ikd-mil ablate        --config run.yaml --out runs/demo --study structure [--repeats 3]

:hierarchy: [CLI]
:relates-to:
 - motivated_by: "Every stage must be runnable and re-runnable from a config file"
 - implements: "function: main, dispatch"
 - uses: ["library: 'argparse'", "module: 'engine'", "module: 'evaluation'", "module: 'plots'"]

:contract:
 - pre: "command in COMMANDS"
 - post: "exit status 0 on success, 1 when any ikd_mil error fired"
 - invariant: "run directories hold config echo, manifest, CSVs and checkpoints"

:complexity: 7
"""

import argparse
import dataclasses
import json
import shutil
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from ikd_mil.core.config import RunConfig, parse_config, write_config_echo, write_run_manifest
from ikd_mil.core.exceptions import ConfigurationError, IkdMilError, MissingArtifactError
from ikd_mil.data import (
    PatchDataset,
    generate_synthetic_dataset,
    ingest_patch_folder,
    load_dataset,
    resize_dataset,
    save_dataset,
    split_validation,
)
from ikd_mil.data.storage import DATASET_FILE
from ikd_mil.metrics.evaluation import (
    MetricsReport,
    evaluate_dataset,
    predict_fused,
    report_from_predictions,
    summary_table,
)
from ikd_mil.models import Checkpoint, build_backbone, cycle_stage_tag, load_checkpoint, save_checkpoint
from ikd_mil.training.engine import (
    CycleReport,
    fit_fusion_weights,
    run_iterative_distillation,
    train_mil_stage,
)
from ikd_mil.training.history import TrainingHistory, load_history, read_history
from ikd_mil.utils.formatting import NumpyEncoder, format_mean_std
from ikd_mil.utils.logger import get_logger, run_log, setup_logging
from ikd_mil.utils.plots import aggregate_period_curves, export_figure, plot_period_curves, plot_sweep

COMMANDS = ("generate-data", "train-mil", "fit-fusion", "distill", "evaluate", "report", "ablate")
A_SWEEP = (0.0, 0.1, 0.25, 0.5, 1.0, 5.0)

HISTORY_FILE = "history.csv"
MIL_CHECKPOINT = Path("checkpoints") / "mil.pt"
BEST_CHECKPOINT = "best.pt"
CYCLE_REPORTS = "cycle_reports.json"

logger = get_logger(__name__)


# <semantic_block: run_layout>


@dataclasses.dataclass
class RunContext:
    """Effective config plus the directories one command works in."""

    cfg: RunConfig
    run_dir: Path
    data_dir: Path
    command: str

    @property
    def history_path(self) -> Path:
        return self.run_dir / HISTORY_FILE

    def echo(self, extra: Optional[Dict] = None) -> None:
        write_config_echo(self.cfg, self.run_dir)
        write_run_manifest(self.cfg, self.run_dir, self.command, extra)


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.data.synth = dataclasses.replace(cfg.data.synth, seed=args.seed)
    if args.device is not None:
        cfg.train = dataclasses.replace(cfg.train, device=args.device)
    return cfg


def _context(args: argparse.Namespace) -> RunContext:
    cfg = _apply_overrides(parse_config(args.config), args)
    run_dir = Path(args.out) if args.out else cfg.run_dir
    data_dir = Path(args.data) if getattr(args, "data", None) else run_dir / "data"
    run_dir.mkdir(parents=True, exist_ok=True)
    return RunContext(cfg=cfg, run_dir=run_dir, data_dir=data_dir, command=args.command)


def _with_train(cfg: RunConfig, **changes) -> RunConfig:
    """Copy of cfg with train fields replaced; loss.a follows train.a."""
    train = dataclasses.replace(cfg.train, **changes)
    loss = dataclasses.replace(cfg.loss, a=train.a)
    return dataclasses.replace(cfg, train=train, loss=loss)


# <semantic_block: data>


def _generate(cfg: RunConfig, data_dir: Path) -> Tuple[PatchDataset, PatchDataset]:
    data = cfg.data
    if data.source == "folder":
        train = ingest_patch_folder(data.train_folder, data.filter, data.train_manifest, role="train")
        if not (data.test_folder and data.test_manifest):
            raise MissingArtifactError(data.test_folder or "data.test_folder", "folder source needs a test split")
        test = ingest_patch_folder(data.test_folder, data.filter, data.test_manifest, role="test")
    else:
        train = generate_synthetic_dataset(data.synth, role="train", name="train")
        test_spec = dataclasses.replace(
            data.synth, count_pos=data.test_count_pos, count_neg=data.test_count_neg, seed=data.synth.seed + 1
        )
        test = generate_synthetic_dataset(test_spec, role="test", name="test")
    save_dataset(train, data_dir / "train")
    save_dataset(test, data_dir / "test")
    return train, test


def _ensure_data(ctx: RunContext) -> None:
    if not (ctx.data_dir / "train" / DATASET_FILE).exists():
        _generate(ctx.cfg, ctx.data_dir)


def _load_split(ctx: RunContext, split: str) -> PatchDataset:
    dataset = load_dataset(ctx.data_dir / split, role="test" if split == "test" else "train")
    return resize_dataset(dataset, ctx.cfg.backbone.input_size)


def _train_val(ctx: RunContext) -> Tuple[PatchDataset, Optional[PatchDataset]]:
    train = _load_split(ctx, "train")
    return split_validation(train, ctx.cfg.train.validation_fraction, ctx.cfg.train.seed)


def _load_mil(run_dir: Path) -> Checkpoint:
    return load_checkpoint(run_dir / MIL_CHECKPOINT, hint="run 'ikd-mil train-mil' first")


def _history(run_dir: Path) -> TrainingHistory:
    path = run_dir / HISTORY_FILE
    return load_history(path) if path.exists() else TrainingHistory()


# <semantic_block: stages>


def _stage_one(ctx: RunContext, history: TrainingHistory, fit_fusion: bool = True) -> Checkpoint:
    train, val = _train_val(ctx)
    model = build_backbone(ctx.cfg.backbone, seed=ctx.cfg.train.seed)
    checkpoint = train_mil_stage(
        model, train, ctx.cfg.train, val=val, loss_cfg=ctx.cfg.loss, metrics_cfg=ctx.cfg.metrics, history=history
    )
    if fit_fusion:
        fit_fusion_weights(model, train, ctx.cfg.train, loss_cfg=ctx.cfg.loss, history=history)
        checkpoint = Checkpoint.from_model(model, "mil", metadata={**checkpoint.metadata, "fusion_fitted": True})
    save_checkpoint(checkpoint, ctx.run_dir / MIL_CHECKPOINT)
    history.to_csv(ctx.run_dir / HISTORY_FILE)
    return checkpoint


def _distill(ctx: RunContext, teacher: Checkpoint, history: TrainingHistory) -> Tuple[Checkpoint, List[CycleReport]]:
    train, val = _train_val(ctx)
    best_model, reports = run_iterative_distillation(
        ctx.cfg.train,
        train,
        val,
        teacher=teacher,
        loss_cfg=ctx.cfg.loss,
        metrics_cfg=ctx.cfg.metrics,
        history=history,
        run_dir=ctx.run_dir,
    )
    scored = [r for r in reports if r.best_f1 is not None]
    if scored:
        tag = cycle_stage_tag(max(scored, key=lambda r: r.best_f1).cycle_index)
    elif reports:
        tag = cycle_stage_tag(reports[-1].cycle_index)
    else:
        tag = "mil"
    best = Checkpoint.from_model(
        best_model, tag, metadata={"best_val_f1": max((r.best_f1 for r in scored), default=None)}
    )
    save_checkpoint(best, ctx.run_dir / BEST_CHECKPOINT)
    history.to_csv(ctx.run_dir / HISTORY_FILE)
    (ctx.run_dir / CYCLE_REPORTS).write_text(
        json.dumps([r.to_dict() for r in reports], indent=2, cls=NumpyEncoder), encoding="utf-8"
    )
    return best, reports


def _evaluate(ctx: RunContext, checkpoint_path: Optional[str] = None) -> Dict[str, MetricsReport]:
    test = _load_split(ctx, "test")
    targets = {"distilled": Path(checkpoint_path) if checkpoint_path else ctx.run_dir / BEST_CHECKPOINT}
    if checkpoint_path is None:
        targets["mil-teacher"] = ctx.run_dir / MIL_CHECKPOINT
    reports: Dict[str, MetricsReport] = {}
    for name, path in targets.items():
        if name == "mil-teacher" and not path.exists():
            continue
        model = load_checkpoint(path, hint="run 'ikd-mil distill' first").to_model(ctx.cfg.train.device)
        report = evaluate_dataset(model, test, cfg=ctx.cfg.metrics, batch_size=ctx.cfg.train.eval_batch_size)
        reports[name] = report
        report.write(ctx.run_dir, stem="metrics" if name == "distilled" else "metrics_mil", title=name)
    (ctx.run_dir / "summary.txt").write_text(summary_table(reports) + "\n", encoding="utf-8")
    logger.info(f"[CLI|Evaluate]\n{summary_table(reports)}")
    return reports


# <semantic_block: commands>


def cmd_generate_data(ctx: RunContext, args: argparse.Namespace) -> int:
    train, test = _generate(ctx.cfg, ctx.data_dir)
    ctx.echo({"train_size": len(train), "test_size": len(test)})
    logger.info(f"[CLI|GenerateData] train={len(train)} | test={len(test)} | dir={ctx.data_dir}")
    return 0


def cmd_train_mil(ctx: RunContext, args: argparse.Namespace) -> int:
    _ensure_data(ctx)
    ctx.echo()
    checkpoint = _stage_one(ctx, TrainingHistory(), fit_fusion=False)
    logger.info(f"[CLI|TrainMil] saved {ctx.run_dir / MIL_CHECKPOINT} | checksum={checkpoint.checksum()[:12]}")
    return 0


def cmd_fit_fusion(ctx: RunContext, args: argparse.Namespace) -> int:
    checkpoint = _load_mil(ctx.run_dir)
    train, _ = _train_val(ctx)
    model = checkpoint.to_model(ctx.cfg.train.device)
    history = _history(ctx.run_dir)
    weights = fit_fusion_weights(model, train, ctx.cfg.train, loss_cfg=ctx.cfg.loss, history=history)
    updated = Checkpoint.from_model(model, "mil", metadata={**checkpoint.metadata, "fusion_fitted": True})
    save_checkpoint(updated, ctx.run_dir / MIL_CHECKPOINT)
    history.to_csv(ctx.history_path)
    ctx.echo()
    logger.info(f"[CLI|FitFusion] weights={[round(w, 4) for w in weights.as_list()]}")
    return 0


def cmd_distill(ctx: RunContext, args: argparse.Namespace) -> int:
    teacher = _load_mil(ctx.run_dir)
    ctx.echo()
    best, reports = _distill(ctx, teacher, _history(ctx.run_dir))
    logger.info(f"[CLI|Distill] cycles={len(reports)} | best={best.stage_tag}")
    return 0


def cmd_evaluate(ctx: RunContext, args: argparse.Namespace) -> int:
    _evaluate(ctx, args.checkpoint)
    return 0


def _is_run(path: Path) -> bool:
    return (path / HISTORY_FILE).exists()


def _collect_arms(paths: Sequence[Path]) -> Dict[str, List[Path]]:
    """Dirs holding rep-* runs are arms; plain run dirs are repeats of one arm."""
    arms: Dict[str, List[Path]] = {}
    plain: List[Path] = []
    for path in paths:
        reps = sorted(p for p in path.glob("rep-*") if _is_run(p))
        if reps:
            arms[path.name] = reps
        elif _is_run(path):
            plain.append(path)
        else:
            raise MissingArtifactError(path / HISTORY_FILE, "run 'ikd-mil distill' first")
    if plain:
        arms["run" if len(plain) > 1 else plain[0].name] = plain
    return arms


def _teacher_reference(frames: Sequence[pd.DataFrame]) -> Optional[float]:
    values = [f.loc[f["stage"] == "mil", "val_f1"].max() for f in frames]
    values = [v for v in values if pd.notna(v)]
    return float(sum(values) / len(values)) if values else None


def _write_curves(arms: Dict[str, List[Path]], period: int, out_dir: Path, title: str) -> pd.DataFrame:
    curves: Dict[str, pd.DataFrame] = {}
    frames_all: List[pd.DataFrame] = []
    for name, runs in arms.items():
        frames = [read_history(run / HISTORY_FILE) for run in runs]
        frames_all.extend(frames)
        curves[name] = aggregate_period_curves(frames, period)
    reference = _teacher_reference(frames_all)
    fig = plot_period_curves(curves, reference=reference, title=title)
    export_figure(fig, out_dir / "curves")
    columns = ["arm", "epoch", "mean", "std", "n"]
    parts = [c.assign(arm=name) for name, c in curves.items() if not c.empty]
    table = pd.concat(parts, ignore_index=True)[columns] if parts else pd.DataFrame(columns=columns)
    table.to_csv(out_dir / "curves.csv", index=False)
    return table


def cmd_report(ctx: RunContext, args: argparse.Namespace) -> int:
    out_dir = ctx.run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in (args.runs or [ctx.run_dir])]
    arms = _collect_arms(paths)
    table = _write_curves(arms, ctx.cfg.train.switch_period_epochs, out_dir, "Best validation F1 per period")
    for arm, frame in table.groupby("arm"):
        last = frame.sort_values("epoch").iloc[-1]
        logger.info(f"[CLI|Report] arm={arm} | final={format_mean_std(last['mean'], last['std'], percent=True)}")

    if args.thresholds:
        test = _load_split(ctx, "test")
        model = load_checkpoint(ctx.run_dir / BEST_CHECKPOINT, hint="run 'ikd-mil distill' first").to_model(
            ctx.cfg.train.device
        )
        predictions = predict_fused(model, test, ctx.cfg.train.eval_batch_size)
        rows = [
            report_from_predictions(predictions, test, ctx.cfg.metrics, threshold=t).summary_dict()
            for t in args.thresholds
        ]
        pd.DataFrame(rows).to_csv(out_dir / "thresholds.csv", index=False)
        logger.info(f"[CLI|Report] threshold sweep -> {out_dir / 'thresholds.csv'}")
    return 0


def study_arms(study: str, cfg: RunConfig) -> Dict[str, RunConfig]:
    """Named arm configs of one ablation study."""
    if study == "structure":
        return {s: _with_train(cfg, distill_structure=s) for s in ("fusion", "a", "b")}
    if study == "switch":
        return {"switch": _with_train(cfg, role_switch=True), "no-switch": _with_train(cfg, role_switch=False)}
    if study == "a-sweep":
        return {f"a-{a:g}": _with_train(cfg, a=a) for a in A_SWEEP}
    if study == "loss":
        a = cfg.train.a if cfg.train.a > 0 else 0.25
        return {"kd-only": _with_train(cfg, a=0.0), "kd+wce": _with_train(cfg, a=a)}
    raise ConfigurationError(f"Unknown study '{study}'")


def _arm_summary(name: str, reports: List[MetricsReport], value) -> Dict:
    def stats(attr: str) -> Tuple[Optional[float], Optional[float]]:
        values = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        if not values:
            return None, None
        series = pd.Series(values, dtype=float)
        return float(series.mean()), float(series.std(ddof=0))

    f1, f1_std = stats("mean_f1")
    iou, iou_std = stats("mean_iou")
    hd, hd_std = stats("mean_hd_pos")
    return {
        "arm": name,
        "value": value,
        "repeats": len(reports),
        "mean": f1,
        "std": f1_std,
        "iou_mean": iou,
        "iou_std": iou_std,
        "hd_pos_mean": hd,
        "hd_pos_std": hd_std,
    }


def cmd_ablate(ctx: RunContext, args: argparse.Namespace) -> int:
    study_dir = ctx.run_dir / args.study
    _ensure_data(ctx)
    ctx.echo({"study": args.study, "repeats": args.repeats})
    arms = study_arms(args.study, ctx.cfg)
    test_reports: Dict[str, List[MetricsReport]] = {name: [] for name in arms}

    for rep in range(args.repeats):
        seed = ctx.cfg.train.seed + rep
        stage_ctx = RunContext(
            cfg=_with_train(ctx.cfg, seed=seed),
            run_dir=study_dir / "stage1" / f"rep-{rep}",
            data_dir=ctx.data_dir,
            command="train-mil",
        )
        stage_ctx.run_dir.mkdir(parents=True, exist_ok=True)
        if (stage_ctx.run_dir / MIL_CHECKPOINT).exists():
            teacher = _load_mil(stage_ctx.run_dir)
        else:
            stage_ctx.echo()
            teacher = _stage_one(stage_ctx, TrainingHistory())
        stage_history = _history(stage_ctx.run_dir)

        for name, arm_cfg in arms.items():
            arm_ctx = RunContext(
                cfg=_with_train(arm_cfg, seed=seed),
                run_dir=study_dir / name / f"rep-{rep}",
                data_dir=ctx.data_dir,
                command=f"ablate {args.study}",
            )
            arm_ctx.run_dir.mkdir(parents=True, exist_ok=True)
            arm_ctx.echo({"arm": name, "repeat": rep})
            (arm_ctx.run_dir / "checkpoints").mkdir(exist_ok=True)
            shutil.copyfile(stage_ctx.run_dir / MIL_CHECKPOINT, arm_ctx.run_dir / MIL_CHECKPOINT)
            history = _history(arm_ctx.run_dir) if _is_run(arm_ctx.run_dir) else TrainingHistory(stage_history.rows)
            _distill(arm_ctx, teacher, history)
            test_reports[name].append(_evaluate(arm_ctx)["distilled"])
            logger.info(f"[CLI|Ablate] study={args.study} | arm={name} | rep={rep} done")

    values = {name: _arm_value(args.study, cfg) for name, cfg in arms.items()}
    summary = pd.DataFrame([_arm_summary(name, test_reports[name], values[name]) for name in arms])
    summary.to_csv(study_dir / "summary.csv", index=False)
    lines = [f"{'arm':<12}{'F1':>12}{'IOU':>12}{'HD^Pos':>12}"]
    for row in summary.itertuples(index=False):
        lines.append(
            f"{row.arm:<12}{format_mean_std(row.mean, row.std, percent=True):>12}"
            f"{format_mean_std(row.iou_mean, row.iou_std, percent=True):>12}"
            f"{format_mean_std(row.hd_pos_mean, row.hd_pos_std):>12}"
        )
    (study_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    arm_runs = {name: sorted((study_dir / name).glob("rep-*")) for name in arms}
    _write_curves(arm_runs, ctx.cfg.train.switch_period_epochs, study_dir, f"{args.study} ablation")
    export_figure(plot_sweep(summary, x="arm", title=f"{args.study}: test F1"), study_dir / "test_f1")
    logger.info(f"[CLI|Ablate] {args.study}\n" + "\n".join(lines))
    return 0


def _arm_value(study: str, cfg: RunConfig):
    return {
        "structure": cfg.train.distill_structure,
        "switch": cfg.train.role_switch,
        "a-sweep": cfg.train.a,
        "loss": cfg.train.a,
    }[study]


HANDLERS: Dict[str, Callable[[RunContext, argparse.Namespace], int]] = {
    "generate-data": cmd_generate_data,
    "train-mil": cmd_train_mil,
    "fit-fusion": cmd_fit_fusion,
    "distill": cmd_distill,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="YAML run config (defaults when omitted)")
    common.add_argument("--out", type=str, default=None, help="Run directory (default: output_dir/run_name)")
    common.add_argument("--seed", type=int, default=None, help="Override train and data seeds")
    common.add_argument("--device", type=str, default=None, help="Torch device, e.g. cpu or cuda:0")
    common.add_argument("--data", type=str, default=None, help="Dataset directory (default: <out>/data)")

    parser = argparse.ArgumentParser(
        prog="ikd-mil", description="MIL pseudo-mask training with iterative fusion-knowledge distillation"
    )
    parser.add_argument("--log-level", type=str, default=None, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="Create train/test datasets")
    sub.add_parser("train-mil", parents=[common], help="Stage 1: MIL teacher training")
    sub.add_parser("fit-fusion", parents=[common], help="Stage 1: fit fusion weights of mil.pt")
    sub.add_parser("distill", parents=[common], help="Stage 2: iterative distillation")
    evaluate = sub.add_parser("evaluate", parents=[common], help="Test-split metrics")
    evaluate.add_argument("--checkpoint", type=str, default=None, help="Checkpoint to evaluate (default best.pt)")
    report = sub.add_parser("report", parents=[common], help="Curves with error bars, threshold sweep")
    report.add_argument("--runs", nargs="+", default=None, help="Run or arm directories")
    report.add_argument("--thresholds", nargs="+", type=float, default=None, help="Binarization thresholds")
    ablate = sub.add_parser("ablate", parents=[common], help="Scripted ablation studies")
    ablate.add_argument("--study", choices=["structure", "switch", "a-sweep", "loss"], required=True)
    ablate.add_argument("--repeats", type=int, default=3, help="Repeats per arm (seeds seed..seed+N-1)")
    return parser


def dispatch(command: str, args: argparse.Namespace) -> int:
    """
    Run one command; ikd_mil errors become exit status 1.

    :hierarchy: [CLI | Dispatch]
    """
    if command not in HANDLERS:
        logger.error(f"[CLI|Dispatch] unknown command '{command}'")
        return 2
    try:
        ctx = _context(args)
    except IkdMilError as e:
        logger.error(f"[CLI|{command}] {type(e).__name__}: {e}")
        return 1
    with run_log(ctx.run_dir):
        logger.record("CLI", command, config=args.config, run_dir=ctx.run_dir)
        try:
            return HANDLERS[command](ctx, args)
        except IkdMilError as e:
            logger.error(f"[CLI|{command}] {type(e).__name__}: {e}")
            return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logging(level=args.log_level.upper())
    try:
        return dispatch(args.command, args)
    except KeyboardInterrupt:
        logger.warning("[CLI|Main] interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
