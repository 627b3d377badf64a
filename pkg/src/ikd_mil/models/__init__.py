"""Segmentation models, backbone registry and checkpoints."""

from ikd_mil.models.backbone import (
    BACKBONE_REGISTRY,
    get_backbone_builder,
    list_backbones,
    register_backbone,
)
from ikd_mil.models.checkpoint import (
    Checkpoint,
    cycle_stage_tag,
    load_checkpoint,
    save_checkpoint,
)
from ikd_mil.models.seg_model import (
    FusionWeights,
    MultiScaleOutput,
    SegModel,
    bilinear_resize,
    build_backbone,
    clone_model,
    forward_multiscale,
    fuse_maps,
    swap_parameters,
)

__all__ = [
    "BACKBONE_REGISTRY",
    "Checkpoint",
    "FusionWeights",
    "MultiScaleOutput",
    "SegModel",
    "bilinear_resize",
    "build_backbone",
    "clone_model",
    "cycle_stage_tag",
    "forward_multiscale",
    "fuse_maps",
    "get_backbone_builder",
    "list_backbones",
    "load_checkpoint",
    "register_backbone",
    "save_checkpoint",
    "swap_parameters",
]
