"""
Two-stage training engine.

Stage 1 trains a SegModel under the MIL teacher loss with naive masks and
then fits its fusion weights alone. Stage 2 runs distillation cycles: a
frozen teacher supervises a student, and after each cycle the two may
exchange parameters.

:hierarchy: [Training | Engine]
:relates-to:
 - motivated_by: "Pseudo-masks improve when a better student becomes the next teacher"
 - implements: "functions: train_mil_stage, fit_fusion_weights, distillation_cycle,
                run_iterative_distillation; class: 'CycleReport'"
 - uses: ["module: 'losses'", "module: 'seg_model'", "module: 'evaluation'"]

:contract:
 - pre: "training data non-empty; validation data never has role 'test'"
 - post: "teacher parameters bit-identical across every cycle (checksum guard)"
 - invariant: "(config, seed) -> identical history on one platform"

:complexity: 8
:decision_cache: "Teacher outputs recomputed per batch; optimizer reset at every switch"
"""

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from ikd_mil.core.config import BackboneSpec, LossConfig, MetricsConfig, TrainConfig
from ikd_mil.core.exceptions import (
    CheckpointError,
    ConfigurationError,
    InvariantViolationError,
    TrainingAbortedError,
)
from ikd_mil.data.batching import make_loader
from ikd_mil.data.patches import PatchDataset
from ikd_mil.metrics.evaluation import MetricsReport, evaluate_dataset
from ikd_mil.models.checkpoint import Checkpoint, cycle_stage_tag, save_checkpoint
from ikd_mil.models.seg_model import (
    FusionWeights,
    MultiScaleOutput,
    SegModel,
    build_backbone,
    check_compatible,
    clone_model,
    fuse_maps,
    swap_parameters,
)
from ikd_mil.training.history import HistoryRow, TrainingHistory
from ikd_mil.training.losses import distillation_loss_components, naive_masks, teacher_loss
from ikd_mil.utils.hashing import config_content_hash, parameter_checksum
from ikd_mil.utils.logger import get_logger

STAGE_CODES = {"mil": 1, "fusion": 2, "distill": 3}
RESUME_FORMAT_VERSION = 2
RUNTIME_ONLY_FIELDS = ("device", "eval_batch_size")


@dataclass
class EpochMetrics:
    """Validation metrics of one epoch."""

    epoch: int
    f1: Optional[float]
    iou: Optional[float]
    hd: Optional[float]


@dataclass
class CycleReport:
    """
    Outcome of one distillation cycle.

    :hierarchy: [Training | Engine | CycleReport]
    :contract:
     - invariant: "best_f1 == max(m.f1 for m in epoch_metrics) when metrics exist"
    """

    cycle_index: int
    start_epoch: int
    epochs: int
    epoch_metrics: List[EpochMetrics] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_f1: Optional[float] = None
    best_checkpoint: Optional[Checkpoint] = None
    teacher_checksum: str = ""
    student_checksum_end: str = ""
    teacher_val_f1: Optional[float] = None
    switched: bool = False
    mean_losses: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(dataclasses.replace(self, best_checkpoint=None))
        data.pop("best_checkpoint")
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CycleReport":
        data = dict(data)
        data["epoch_metrics"] = [EpochMetrics(**m) for m in data.get("epoch_metrics", [])]
        return cls(**data)


def _epoch_seed(seed: int, stage: str, epoch: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, STAGE_CODES[stage], epoch]).generate_state(1)[0])


def _device(cfg: TrainConfig) -> torch.device:
    return torch.device(cfg.device)


def _loss_config(cfg: TrainConfig, loss_cfg: Optional[LossConfig]) -> LossConfig:
    return dataclasses.replace(loss_cfg or LossConfig(), a=cfg.a)


def _require_data(data: PatchDataset, what: str) -> None:
    if data is None or len(data) == 0:
        raise ConfigurationError(f"{what} requires a non-empty training dataset")


def _require_validation(val: Optional[PatchDataset]) -> None:
    if val is not None and val.role == "test":
        raise ConfigurationError(
            "Checkpoint selection on the test split is refused; pass a validation split"
        )


def _check_finite(loss: torch.Tensor, epoch: int, batch_index: int, stage: str) -> None:
    if not torch.isfinite(loss).all():
        raise TrainingAbortedError(
            f"Non-finite {stage} loss ({float(loss)})", epoch=epoch, batch_index=batch_index
        )


def _evaluate(
    model: SegModel, val: Optional[PatchDataset], cfg: TrainConfig, metrics_cfg: Optional[MetricsConfig]
) -> Optional[MetricsReport]:
    if val is None or len(val) == 0:
        return None
    return evaluate_dataset(model, val, cfg=metrics_cfg, batch_size=cfg.eval_batch_size)


# <semantic_block: stage_one>


def train_mil_stage(
    model: SegModel,
    data: PatchDataset,
    cfg: TrainConfig,
    val: Optional[PatchDataset] = None,
    loss_cfg: Optional[LossConfig] = None,
    metrics_cfg: Optional[MetricsConfig] = None,
    history: Optional[TrainingHistory] = None,
) -> Checkpoint:
    """
    Train backbone and heads under the teacher loss with naive masks.

    Fusion logits are held fixed. When ``val`` is given, its metrics are
    recorded every ``eval_every_epochs`` epochs.

    :hierarchy: [Training | Engine | TrainMilStage]
    :contract:
     - pre: "data non-empty"
     - post: "returns checkpoint tagged 'mil'; mil_epochs == 0 leaves the model untouched"

    Raises:
        ConfigurationError: empty dataset or test data as validation
        TrainingAbortedError: non-finite loss (carries epoch and batch index)
    """
    logger = get_logger(__name__, train_mil_stage)
    _require_data(data, "train_mil_stage")
    _require_validation(val)
    device = _device(cfg)
    losses = _loss_config(cfg, loss_cfg)
    model.to(device)
    model.train()
    model.set_trainable(backbone=True, fusion=False)
    best_f1: Optional[float] = None

    if cfg.mil_epochs > 0:
        optimizer = torch.optim.Adam(
            list(model.backbone_parameters()), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
        )
        for epoch in range(1, cfg.mil_epochs + 1):
            total, count = 0.0, 0
            batches = make_loader(data, cfg.batch_size, seed=_epoch_seed(cfg.seed, "mil", epoch))
            for batch_index, batch in enumerate(batches):
                batch = batch.to(device)
                out = model(batch.pixels)
                masks = naive_masks(batch.labels, batch.pixels.shape[-2:], device=device)
                loss = teacher_loss(out, masks, batch.labels, losses)
                _check_finite(loss, epoch, batch_index, "teacher")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss.detach()) * len(batch)
                count += len(batch)
                logger.debug(f"mil epoch={epoch} batch={batch_index} loss={float(loss):.5f}")

            mean_loss = total / max(count, 1)
            report = None
            if epoch % cfg.eval_every_epochs == 0 or epoch == cfg.mil_epochs:
                report = _evaluate(model, val, cfg, metrics_cfg)
                model.train()
            if report is not None and report.mean_f1 is not None:
                best_f1 = report.mean_f1 if best_f1 is None else max(best_f1, report.mean_f1)
            logger.record(
                "Engine",
                "MIL",
                epoch=f"{epoch}/{cfg.mil_epochs}",
                loss_teacher=mean_loss,
                val_f1=report.mean_f1 if report else None,
            )
            if history is not None:
                history.append(
                    HistoryRow(
                        epoch=epoch,
                        cycle=0,
                        stage="mil",
                        role="teacher",
                        loss_total=mean_loss,
                        loss_teacher=mean_loss,
                        val_f1=report.mean_f1 if report else None,
                        val_iou=report.mean_iou if report else None,
                        val_hd=report.mean_hd_pos if report else None,
                    )
                )

    model.set_trainable(backbone=True, fusion=True)
    return Checkpoint.from_model(
        model, "mil", metadata={"mil_epochs": cfg.mil_epochs, "best_val_f1": best_f1, "seed": cfg.seed}
    )


def fit_fusion_weights(
    model: SegModel,
    data: PatchDataset,
    cfg: TrainConfig,
    loss_cfg: Optional[LossConfig] = None,
    history: Optional[TrainingHistory] = None,
) -> FusionWeights:
    """
    Optimize only the fusion logits under the teacher loss.

    Per-block maps are computed without gradient because blocks and heads
    are frozen; only the fused term depends on the logits.

    :hierarchy: [Training | Engine | FitFusionWeights]
    :contract:
     - pre: "data non-empty"
     - post: "all non-fusion parameters bit-identical before/after"

    Returns:
        The model's (updated) FusionWeights
    """
    logger = get_logger(__name__, fit_fusion_weights)
    _require_data(data, "fit_fusion_weights")
    device = _device(cfg)
    losses = _loss_config(cfg, loss_cfg)
    model.to(device)
    model.train()
    model.set_trainable(backbone=False, fusion=True)

    if cfg.fusion_fit_epochs > 0:
        optimizer = torch.optim.Adam([model.fusion.logits], lr=cfg.fusion_learning_rate)
        for epoch in range(1, cfg.fusion_fit_epochs + 1):
            total, count = 0.0, 0
            batches = make_loader(data, cfg.batch_size, seed=_epoch_seed(cfg.seed, "fusion", epoch))
            for batch_index, batch in enumerate(batches):
                batch = batch.to(device)
                model.check_input(batch.pixels)
                with torch.no_grad():
                    per_block = model.per_block_maps(batch.pixels)
                out = MultiScaleOutput(per_block=per_block, fused=fuse_maps(per_block, model.fusion))
                masks = naive_masks(batch.labels, batch.pixels.shape[-2:], device=device)
                loss = teacher_loss(out, masks, batch.labels, losses)
                _check_finite(loss, epoch, batch_index, "fusion")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss.detach()) * len(batch)
                count += len(batch)
            mean_loss = total / max(count, 1)
            logger.record(
                "Engine",
                "Fusion",
                epoch=f"{epoch}/{cfg.fusion_fit_epochs}",
                loss_teacher=mean_loss,
                weights=[round(w, 4) for w in model.fusion.as_list()],
            )
            if history is not None:
                history.append(
                    HistoryRow(
                        epoch=epoch,
                        cycle=0,
                        stage="fusion",
                        role="teacher",
                        loss_total=mean_loss,
                        loss_teacher=mean_loss,
                    )
                )

    model.set_trainable(backbone=True, fusion=True)
    return model.fusion


# <semantic_block: stage_two>


def _freeze_teacher(teacher: SegModel) -> None:
    teacher.eval()
    teacher.requires_grad_(False)


def distillation_cycle(
    teacher: SegModel,
    student: SegModel,
    data: PatchDataset,
    val: Optional[PatchDataset],
    cfg: TrainConfig,
    cycle_index: int = 0,
    optimizer: Optional[torch.optim.Optimizer] = None,
    loss_cfg: Optional[LossConfig] = None,
    metrics_cfg: Optional[MetricsConfig] = None,
    history: Optional[TrainingHistory] = None,
    start_epoch: int = 1,
    epochs: Optional[int] = None,
) -> CycleReport:
    """
    Train the student against a frozen teacher for one switch period.

    :hierarchy: [Training | Engine | DistillationCycle]
    :contract:
     - pre: "teacher and student structurally identical"
     - post: "teacher checksum unchanged at every epoch boundary"
     - post: "best_checkpoint holds the student state of the best validation epoch"

    Args:
        teacher: Frozen supervisor (put in eval mode, gradients disabled)
        student: Trained model (fusion logits stay frozen)
        data: Training dataset
        val: Validation dataset for checkpoint selection (never the test split)
        cfg: Training configuration
        cycle_index: Cycle number used for tags and history
        optimizer: Optimizer over the student's backbone parameters; a new Adam if None
        loss_cfg: Loss constants (``a`` comes from cfg)
        metrics_cfg: Metric conventions for validation
        history: History to append epoch rows to
        start_epoch: Global distillation epoch of this cycle's first epoch
        epochs: Epoch count; defaults to switch_period_epochs

    Raises:
        InvariantViolationError: teacher parameters changed during the cycle
    """
    logger = get_logger(__name__, distillation_cycle)
    _require_data(data, "distillation_cycle")
    _require_validation(val)
    check_compatible(teacher, student)
    epochs = cfg.switch_period_epochs if epochs is None else epochs
    device = _device(cfg)
    losses = _loss_config(cfg, loss_cfg)

    teacher.to(device)
    student.to(device)
    _freeze_teacher(teacher)
    teacher_sum = parameter_checksum(teacher)
    teacher_report = _evaluate(teacher, val, cfg, metrics_cfg)
    student.train()
    student.set_trainable(backbone=True, fusion=False)
    if optimizer is None:
        optimizer = torch.optim.Adam(
            list(student.backbone_parameters()), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
        )

    report = CycleReport(
        cycle_index=cycle_index,
        start_epoch=start_epoch,
        epochs=epochs,
        teacher_checksum=teacher_sum,
        teacher_val_f1=teacher_report.mean_f1 if teacher_report else None,
    )
    best_state: Optional[Dict[str, torch.Tensor]] = None

    for offset in range(epochs):
        epoch = start_epoch + offset
        sums = {"total": 0.0, "kd": 0.0, "wce": 0.0}
        count = 0
        batches = make_loader(data, cfg.batch_size, seed=_epoch_seed(cfg.seed, "distill", epoch))
        for batch_index, batch in enumerate(batches):
            batch = batch.to(device)
            with torch.no_grad():
                teacher_out = teacher(batch.pixels)
            student_out = student(batch.pixels)
            terms = distillation_loss_components(
                student_out, teacher_out, batch.labels, losses, structure=cfg.distill_structure
            )
            _check_finite(terms["total"], epoch, batch_index, "student")
            optimizer.zero_grad()
            terms["total"].backward()
            optimizer.step()
            for key in sums:
                sums[key] += float(terms[key].detach()) * len(batch)
            count += len(batch)
            logger.debug(
                f"distill cycle={cycle_index} epoch={epoch} batch={batch_index} "
                f"loss={float(terms['total']):.5f}"
            )

        if parameter_checksum(teacher) != teacher_sum:
            raise InvariantViolationError(
                f"Teacher parameters changed during cycle {cycle_index} (epoch {epoch})"
            )

        means = {k: v / max(count, 1) for k, v in sums.items()}
        report.mean_losses.append(means["total"])
        val_report = None
        if (offset + 1) % cfg.eval_every_epochs == 0 or offset == epochs - 1:
            val_report = _evaluate(student, val, cfg, metrics_cfg)
            student.train()
        if val_report is not None:
            report.epoch_metrics.append(
                EpochMetrics(epoch, val_report.mean_f1, val_report.mean_iou, val_report.mean_hd_pos)
            )
            f1 = val_report.mean_f1
            if f1 is not None and (report.best_f1 is None or f1 > report.best_f1):
                report.best_f1 = f1
                report.best_epoch = epoch
                best_state = copy.deepcopy({k: v.detach().cpu() for k, v in student.state_dict().items()})

        student_sum = parameter_checksum(student)
        logger.record(
            "Engine",
            "Distill",
            cycle=cycle_index,
            epoch=epoch,
            loss_total=means["total"],
            loss_kd=means["kd"],
            loss_wce=means["wce"],
            val_f1=val_report.mean_f1 if val_report else None,
        )
        if history is not None:
            history.append(
                HistoryRow(
                    epoch=epoch,
                    cycle=cycle_index,
                    stage="distill",
                    role="student",
                    loss_total=means["total"],
                    loss_kd=means["kd"],
                    loss_wce=means["wce"],
                    val_f1=val_report.mean_f1 if val_report else None,
                    val_iou=val_report.mean_iou if val_report else None,
                    val_hd=val_report.mean_hd_pos if val_report else None,
                    teacher_checksum=teacher_sum,
                    student_checksum=student_sum,
                )
            )

    if best_state is None:
        best_state = {k: v.detach().cpu().clone() for k, v in student.state_dict().items()}
        report.best_epoch = start_epoch + epochs - 1 if epochs > 0 else None
    report.best_checkpoint = Checkpoint(
        spec=student.spec, state_dict=best_state, stage_tag=cycle_stage_tag(cycle_index)
    )
    report.student_checksum_end = parameter_checksum(student)
    return report


def _should_switch(cfg: TrainConfig, report: CycleReport) -> bool:
    if not cfg.role_switch:
        return False
    if cfg.switch_trigger == "schedule":
        return True
    if report.best_f1 is None or report.teacher_val_f1 is None:
        return False
    return report.best_f1 > report.teacher_val_f1


def _initial_student(teacher: SegModel, cfg: TrainConfig) -> SegModel:
    if cfg.student_init == "copy":
        return clone_model(teacher)
    student = build_backbone(teacher.spec, seed=cfg.seed + 1)
    with torch.no_grad():
        student.fusion.logits.copy_(teacher.fusion.logits.detach().cpu())
    return student


def _resume_config_hash(cfg: TrainConfig, loss_cfg: Optional[LossConfig], spec: BackboneSpec) -> str:
    """Identity of everything a resumed run must share with the run that wrote the bundle."""
    train = {k: v for k, v in dataclasses.asdict(cfg).items() if k not in RUNTIME_ONLY_FIELDS}
    backbone = dataclasses.asdict(dataclasses.replace(spec, pretrained_path=None))
    loss = dataclasses.asdict(_loss_config(cfg, loss_cfg))
    return config_content_hash({"train": train, "loss": loss, "backbone": backbone})


def _resume_path(run_dir: Path, cycle_index: int) -> Path:
    return run_dir / "checkpoints" / f"cycle-{cycle_index}.pt"


def _latest_resume(run_dir: Path) -> Optional[Path]:
    candidates = []
    for path in (run_dir / "checkpoints").glob("cycle-*.pt"):
        suffix = path.stem.split("-", 1)[1]
        if suffix.isdigit():
            candidates.append((int(suffix), path))
    return max(candidates)[1] if candidates else None


def _save_resume(
    run_dir: Path,
    cycle_index: int,
    teacher: SegModel,
    student: SegModel,
    optimizer: Optional[torch.optim.Optimizer],
    reports: List[CycleReport],
    best: Optional[Tuple[float, Dict[str, torch.Tensor]]],
    history: Optional[TrainingHistory],
    config_hash: str,
) -> Path:
    path = _resume_path(run_dir, cycle_index)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": RESUME_FORMAT_VERSION,
            "cycle_index": cycle_index,
            "config_hash": config_hash,
            "teacher": teacher.state_dict(),
            "student": student.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "reports": [r.to_dict() for r in reports],
            "best_f1": best[0] if best else None,
            "best_state": best[1] if best else None,
            "history": history.to_records() if history is not None else [],
        },
        path,
    )
    return path


def run_iterative_distillation(
    cfg: TrainConfig,
    data: PatchDataset,
    val: Optional[PatchDataset],
    teacher: Union[SegModel, Checkpoint, None] = None,
    backbone: Optional[BackboneSpec] = None,
    loss_cfg: Optional[LossConfig] = None,
    metrics_cfg: Optional[MetricsConfig] = None,
    history: Optional[TrainingHistory] = None,
    run_dir: Union[str, Path, None] = None,
    resume: bool = True,
) -> Tuple[SegModel, List[CycleReport]]:
    """
    Repeat distillation cycles until total_distill_epochs are consumed.

    After each cycle except the last, teacher and student swap parameters
    when switching is enabled (every cycle for the schedule trigger, only
    when the student beat the teacher on validation for the validation
    trigger); a switch resets the optimizer state.

    :hierarchy: [Training | Engine | RunIterativeDistillation]
    :contract:
     - pre: "teacher is a stage-1 model/checkpoint, or None to train stage 1 in-line"
     - post: "returns the model with the highest validation F1 over all epochs"
     - post: "cycle-<k>.pt resume bundles in run_dir/checkpoints when run_dir is given"

    Args:
        cfg: Training configuration
        data: Training dataset
        val: Validation dataset (checkpoint selection)
        teacher: Stage-1 model or checkpoint; the caller's object is not mutated
        backbone: Spec for in-line stage 1 when teacher is None
        loss_cfg: Loss constants
        metrics_cfg: Metric conventions
        history: History to append rows to
        run_dir: Run directory for resume bundles and best-cycle checkpoints
        resume: Continue from the latest resume bundle in run_dir

    Returns:
        (best model, cycle reports)

    Raises:
        ConfigurationError: the resume bundle was written under another configuration
        CheckpointError: unreadable resume bundle
    """
    logger = get_logger(__name__, run_iterative_distillation)
    _require_data(data, "run_iterative_distillation")
    _require_validation(val)
    run_path = Path(run_dir) if run_dir is not None else None

    if teacher is None:
        teacher = build_backbone(backbone or BackboneSpec(), seed=cfg.seed)
        train_mil_stage(teacher, data, cfg, val=val, loss_cfg=loss_cfg, metrics_cfg=metrics_cfg, history=history)
        fit_fusion_weights(teacher, data, cfg, loss_cfg=loss_cfg, history=history)
    elif isinstance(teacher, Checkpoint):
        teacher = teacher.to_model()
    else:
        teacher = clone_model(teacher)
    teacher.to("cpu")
    student = _initial_student(teacher, cfg)

    period = cfg.switch_period_epochs
    n_cycles = math.ceil(cfg.total_distill_epochs / period) if cfg.total_distill_epochs > 0 else 0
    reports: List[CycleReport] = []
    best: Optional[Tuple[float, Dict[str, torch.Tensor]]] = None
    optimizer: Optional[torch.optim.Optimizer] = None
    optimizer_state: Optional[Dict[str, Any]] = None
    first_cycle = 0
    config_hash = _resume_config_hash(cfg, loss_cfg, teacher.spec)

    if run_path is not None and resume:
        latest = _latest_resume(run_path)
        if latest is not None:
            try:
                bundle = torch.load(latest, map_location="cpu", weights_only=True)
            except Exception as e:
                raise CheckpointError(f"Cannot read resume bundle {latest}: {e}") from e
            if bundle.get("format_version") != RESUME_FORMAT_VERSION:
                raise CheckpointError(f"Resume bundle {latest} has an unknown format")
            if bundle.get("config_hash") != config_hash:
                raise ConfigurationError(
                    f"Resume bundle {latest} was written under a different configuration; "
                    "use a fresh run directory or disable resume"
                )
            teacher.load_state_dict(bundle["teacher"])
            student.load_state_dict(bundle["student"])
            reports = [CycleReport.from_dict(r) for r in bundle["reports"]]
            if bundle["best_state"] is not None:
                best = (bundle["best_f1"], bundle["best_state"])
            optimizer_state = bundle["optimizer"]
            if history is not None:
                history.rows = TrainingHistory.from_records(bundle["history"]).rows
            first_cycle = bundle["cycle_index"] + 1
            logger.info(f"[Engine|Resume] continuing after cycle {bundle['cycle_index']} from {latest}")

    for cycle_index in range(first_cycle, n_cycles):
        start_epoch = cycle_index * period + 1
        epochs = min(period, cfg.total_distill_epochs - cycle_index * period)
        if optimizer is None:
            student.to(_device(cfg))
            optimizer = torch.optim.Adam(
                list(student.backbone_parameters()), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
            )
            if optimizer_state is not None:
                optimizer.load_state_dict(optimizer_state)
                optimizer_state = None
        report = distillation_cycle(
            teacher,
            student,
            data,
            val,
            cfg,
            cycle_index=cycle_index,
            optimizer=optimizer,
            loss_cfg=loss_cfg,
            metrics_cfg=metrics_cfg,
            history=history,
            start_epoch=start_epoch,
            epochs=epochs,
        )
        if report.best_f1 is not None and (best is None or report.best_f1 > best[0]):
            best = (report.best_f1, report.best_checkpoint.state_dict)

        last = cycle_index == n_cycles - 1
        if not last and _should_switch(cfg, report):
            swap_parameters(teacher, student)
            report.switched = True
            optimizer = None
        reports.append(report)
        logger.record(
            "Engine",
            "Cycle",
            digits=4,
            cycle=cycle_index,
            best_epoch=report.best_epoch,
            best_f1=report.best_f1,
            teacher_f1=report.teacher_val_f1,
            switched=report.switched,
        )

        if run_path is not None:
            save_checkpoint(report.best_checkpoint, run_path / "checkpoints" / f"best-cycle-{cycle_index}.pt")
            _save_resume(run_path, cycle_index, teacher, student, optimizer, reports, best, history, config_hash)

    best_model = clone_model(student)
    if best is not None:
        best_model.load_state_dict(best[1])
    best_model.requires_grad_(True)
    best_model.eval()
    return best_model, reports
