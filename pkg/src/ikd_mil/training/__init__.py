"""Losses, training engine and history."""

from ikd_mil.training.engine import (
    CycleReport,
    EpochMetrics,
    distillation_cycle,
    fit_fusion_weights,
    run_iterative_distillation,
    train_mil_stage,
)
from ikd_mil.training.history import (
    HistoryRow,
    TrainingHistory,
    best_per_period,
    load_history,
    read_history,
)
from ikd_mil.training.losses import (
    apply_label_complement,
    distillation_loss_components,
    kd_loss,
    naive_masks,
    soft_dice_loss,
    student_total_loss,
    teacher_loss,
    wce_loss,
)

__all__ = [
    "CycleReport",
    "EpochMetrics",
    "HistoryRow",
    "TrainingHistory",
    "apply_label_complement",
    "best_per_period",
    "distillation_cycle",
    "distillation_loss_components",
    "fit_fusion_weights",
    "kd_loss",
    "load_history",
    "naive_masks",
    "read_history",
    "run_iterative_distillation",
    "soft_dice_loss",
    "student_total_loss",
    "teacher_loss",
    "train_mil_stage",
    "wce_loss",
]
