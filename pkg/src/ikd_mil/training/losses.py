"""
Objective functions for MIL teacher training and fusion-knowledge distillation.

All losses accept either one map ``(H, W)`` or a batch ``(B, H, W)``; labels
are an int or a ``(B,)`` tensor in {0, 1}. Batched losses are the mean of
per-image losses.

:hierarchy: [Training | Losses]
:relates-to:
 - motivated_by: "Pixel-level training from image-level labels"
 - implements: "functions: soft_dice_loss, apply_label_complement, teacher_loss,
                kd_loss, wce_loss, student_total_loss, distillation_loss_components"

:contract:
 - pre: "maps in [0, 1]; teacher maps carry no gradient"
 - post: "every loss >= 0 and finite"
 - invariant: "apply_label_complement is identity for y=1 and an involution for y=0"

:complexity: 5
:decision_cache: "Dice smoothing in numerator and denominator; log epsilon inside wce"
"""

from typing import Dict, List, Sequence, Tuple, Union

import torch

from ikd_mil.core.config import LossConfig
from ikd_mil.core.exceptions import ConfigurationError, PreconditionError, ShapeError
from ikd_mil.models.seg_model import MultiScaleOutput

Label = Union[int, torch.Tensor]

DISTILL_STRUCTURES = ("fusion", "a", "b")


def _check_same_shape(pred: torch.Tensor, target: torch.Tensor, what: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{what}: prediction and target differ", tuple(target.shape), tuple(pred.shape))


def _label_tensor(y: Label, batch: int, device: torch.device) -> torch.Tensor:
    labels = torch.as_tensor(y, device=device).reshape(-1)
    if labels.numel() == 1 and batch > 1:
        labels = labels.expand(batch)
    if labels.numel() != batch:
        raise ShapeError("Label count does not match batch", batch, labels.numel())
    if not bool(((labels == 0) | (labels == 1)).all()):
        raise PreconditionError(f"Labels must be 0 or 1, got {labels.tolist()}")
    return labels


def _as_batch(t: torch.Tensor) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == 2 else t


def soft_dice_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    eps: float = 1e-6,
    reduce_dims: Union[None, Tuple[int, ...]] = None,
) -> torch.Tensor:
    """
    Smoothed soft dice loss ``1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)``.

    :hierarchy: [Training | Losses | SoftDice]
    :contract:
     - pre: "same shape; values in [0, 1]"
     - post: "0 for a binary exact match; 0 for empty-empty"

    Args:
        pred: Predicted probabilities
        target: Target probabilities
        eps: Smoothing term
        reduce_dims: Dims to sum over; None sums everything into a scalar

    Raises:
        ShapeError: shapes differ
    """
    _check_same_shape(pred, target, "soft_dice_loss")
    target = target.to(pred.dtype)
    if reduce_dims is None:
        inter = (pred * target).sum()
        denom = pred.sum() + target.sum()
    else:
        inter = (pred * target).sum(dim=reduce_dims)
        denom = pred.sum(dim=reduce_dims) + target.sum(dim=reduce_dims)
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def _complement_where(t: torch.Tensor, keep: torch.Tensor) -> torch.Tensor:
    mask = keep.view(-1, *([1] * (t.dim() - 1))).bool()
    return torch.where(mask, t, 1.0 - t)


def apply_label_complement(
    maps: Sequence[torch.Tensor], target: torch.Tensor, y: Label
) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """
    Complement maps and target of normal (y=0) images.

    :hierarchy: [Training | Losses | LabelComplement]
    :contract:
     - post: "y=1 -> inputs unchanged; y=0 -> m -> 1-m and target -> 1-target"

    Args:
        maps: Probability maps, (H, W) or (B, H, W)
        target: Target map of the same shape
        y: Label(s)
    """
    if isinstance(y, int) or (isinstance(y, torch.Tensor) and y.numel() == 1 and target.dim() == 2):
        label = int(y)
        if label not in (0, 1):
            raise PreconditionError(f"Label must be 0 or 1, got {label}")
        if label == 1:
            return list(maps), target
        return [1.0 - m for m in maps], 1.0 - target
    labels = _label_tensor(y, target.shape[0], target.device)
    return [_complement_where(m, labels) for m in maps], _complement_where(target, labels)


def naive_masks(y: Label, shape: Sequence[int], device: Union[str, torch.device] = "cpu") -> torch.Tensor:
    """All-ones maps for y=1 and all-zeros maps for y=0, (B, H, W)."""
    labels = torch.as_tensor(y, device=device).reshape(-1).to(torch.float32)
    return labels.view(-1, 1, 1).expand(labels.numel(), *shape).clone()


def _compound_dice(
    maps: Sequence[torch.Tensor],
    fused: torch.Tensor,
    target: torch.Tensor,
    y: torch.Tensor,
    eps: float,
    include_fused: bool = True,
    include_blocks: bool = True,
) -> torch.Tensor:
    """Per-image Dice(f_w, t) + sum_i Dice(f_i, t) after label complement."""
    comp_maps, comp_target = apply_label_complement(list(maps) + [fused], target, y)
    *comp_blocks, comp_fused = comp_maps
    per_image = torch.zeros(target.shape[0], dtype=fused.dtype, device=fused.device)
    if include_fused:
        per_image = per_image + soft_dice_loss(comp_fused, comp_target, eps, reduce_dims=(-2, -1))
    if include_blocks:
        for block_map in comp_blocks:
            per_image = per_image + soft_dice_loss(block_map, comp_target, eps, reduce_dims=(-2, -1))
    return per_image


def teacher_loss(out: MultiScaleOutput, naive_mask: torch.Tensor, y: Label, cfg: LossConfig) -> torch.Tensor:
    """
    MIL compound loss against the naive mask.

    :hierarchy: [Training | Losses | TeacherLoss]
    :contract:
     - pre: "naive_mask is all-zeros for y=0 and all-ones for y=1"
     - post: "Dice(f_w, l) + sum_i Dice(f_i, l) after label complement"

    Raises:
        PreconditionError: naive mask inconsistent with y
    """
    fused = _as_batch(out.fused)
    per_block = [_as_batch(m) for m in out.per_block]
    mask = _as_batch(naive_mask).to(fused.dtype)
    for m in per_block:
        _check_same_shape(m, fused, "teacher_loss")
    _check_same_shape(fused, mask, "teacher_loss")
    labels = _label_tensor(y, fused.shape[0], fused.device)
    expected = labels.to(mask.dtype).view(-1, 1, 1).expand_as(mask)
    if not torch.equal(mask, expected):
        raise PreconditionError("Naive mask must be all-ones for y=1 and all-zeros for y=0")
    return _compound_dice(per_block, fused, mask, labels, cfg.dice_epsilon).mean()


def distillation_target(teacher_map: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Teacher map for positives, the all-zero ground truth for normals (no gradient)."""
    teacher_map = teacher_map.detach()
    keep = labels.view(-1, 1, 1).to(teacher_map.dtype)
    return teacher_map * keep


def kd_loss(student: MultiScaleOutput, teacher_fused: torch.Tensor, y: Label, cfg: LossConfig) -> torch.Tensor:
    """
    Fusion-knowledge distillation: the teacher's fused map supervises every student map.

    :hierarchy: [Training | Losses | KdLoss]
    :contract:
     - pre: "teacher_fused from a frozen model"
     - post: "Dice(f_w^s, t) + sum_i Dice(f_i^s, t) after label complement"
    """
    fused = _as_batch(student.fused)
    per_block = [_as_batch(m) for m in student.per_block]
    teacher = _as_batch(teacher_fused)
    _check_same_shape(fused, teacher, "kd_loss")
    for m in per_block:
        _check_same_shape(m, teacher, "kd_loss")
    labels = _label_tensor(y, fused.shape[0], fused.device)
    target = distillation_target(teacher, labels)
    return _compound_dice(per_block, fused, target, labels, cfg.dice_epsilon).mean()


def wce_per_pixel_weights(ce: torch.Tensor) -> torch.Tensor:
    """softmax(-ce) over the flattened pixels of each image."""
    flat = ce.reshape(ce.shape[0], -1) if ce.dim() > 1 else ce.reshape(1, -1)
    return torch.softmax(-flat, dim=1)


def wce_loss(student_fused: torch.Tensor, teacher_fused: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """
    Weighted cross-entropy between fused maps.

    ``ce_i = -t_i * log(s_i + log_eps)``; loss ``= sum_i ce_i * softmax(-ce)_i``.

    :hierarchy: [Training | Losses | WceLoss]
    :contract:
     - post: "0 when the teacher map is all-zeros; equals c when every ce_i == c"
    """
    student = _as_batch(student_fused)
    teacher = _as_batch(teacher_fused).detach().to(student.dtype)
    _check_same_shape(student, teacher, "wce_loss")
    ce = -teacher * torch.log(student + cfg.log_epsilon)
    flat = ce.reshape(ce.shape[0], -1)
    weights = wce_per_pixel_weights(ce)
    return (flat * weights).sum(dim=1).mean()


def distillation_loss_components(
    student: MultiScaleOutput,
    teacher: MultiScaleOutput,
    y: Label,
    cfg: LossConfig,
    structure: str = "fusion",
) -> Dict[str, torch.Tensor]:
    """
    Student loss split into its terms for one distillation structure.

    ``fusion``: teacher fused map -> every student map.
    ``a``: teacher block i -> student block i.
    ``b``: teacher fused map -> student fused map.

    Returns:
        Dict with ``total``, ``kd`` and ``wce`` scalars
    """
    if structure not in DISTILL_STRUCTURES:
        raise ConfigurationError(f"Unknown distillation structure '{structure}'")
    s_fused = _as_batch(student.fused)
    s_blocks = [_as_batch(m) for m in student.per_block]
    t_fused = _as_batch(teacher.fused).detach()
    labels = _label_tensor(y, s_fused.shape[0], s_fused.device)

    if structure == "fusion":
        kd = kd_loss(student, t_fused, labels, cfg)
    elif structure == "b":
        target = distillation_target(t_fused, labels)
        kd = _compound_dice([], s_fused, target, labels, cfg.dice_epsilon, include_blocks=False).mean()
    else:
        if len(teacher.per_block) != len(s_blocks):
            raise ConfigurationError("Teacher and student block counts differ")
        per_image = torch.zeros(s_fused.shape[0], dtype=s_fused.dtype, device=s_fused.device)
        for s_map, t_map in zip(s_blocks, teacher.per_block):
            target = distillation_target(_as_batch(t_map), labels)
            per_image = per_image + _compound_dice(
                [], s_map, target, labels, cfg.dice_epsilon, include_blocks=False
            )
        kd = per_image.mean()

    wce = wce_loss(s_fused, distillation_target(t_fused, labels), cfg)
    return {"total": kd + cfg.a * wce, "kd": kd, "wce": wce}


def student_total_loss(
    student: MultiScaleOutput, teacher_fused: torch.Tensor, y: Label, cfg: LossConfig
) -> torch.Tensor:
    """
    ``kd_loss + a * wce_loss``; the wce target of normal images is all-zeros.

    :hierarchy: [Training | Losses | StudentTotal]
    :contract:
     - pre: "cfg.a >= 0"
     - post: "a == 0 gives kd_loss exactly"
    """
    if cfg.a < 0:
        raise ConfigurationError(f"a must be >= 0, got {cfg.a}")
    fused = _as_batch(student.fused)
    labels = _label_tensor(y, fused.shape[0], fused.device)
    kd = kd_loss(student, teacher_fused, labels, cfg)
    if cfg.a == 0:
        return kd
    wce = wce_loss(fused, distillation_target(_as_batch(teacher_fused), labels), cfg)
    return kd + cfg.a * wce
