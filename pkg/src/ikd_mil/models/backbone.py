"""
Backbone registry for segmentation models.

Maps backbone identifiers to builder functions that turn a BackboneSpec into
an ordered list of feature blocks. Each block is a stack of 3x3 convolutions
with ReLU followed by exactly one 2x max-pooling.

:hierarchy: [Models | Backbone | Registry]
:relates-to:
 - motivated_by: "Backbone must be pluggable; loss/engine code never sees it"
 - implements: "module: 'backbone'"

:contract:
 - pre: "All registered builders follow (spec) -> nn.ModuleList"
 - post: "get_backbone_builder() returns callable or raises ConfigurationError"
 - invariant: "Block i halves resolution once; head upsampling factor is 2**(i+1)"

:complexity: 3
:decision_cache: "Dict registry for runtime extensibility"
"""

from typing import Callable, Dict, List, Sequence

import torch
from torch import nn

from ikd_mil.core.config import DEFAULT_BLOCK_PLAN, BackboneSpec
from ikd_mil.core.exceptions import CheckpointError, ConfigurationError
from ikd_mil.utils.logger import get_logger

BackboneBuilder = Callable[[BackboneSpec], nn.ModuleList]


def conv_block(in_channels: int, widths: Sequence[int]) -> nn.Sequential:
    """3x3 conv + ReLU per width, then one 2x max-pool."""
    layers: List[nn.Module] = []
    channels = in_channels
    for width in widths:
        layers.append(nn.Conv2d(channels, int(width), kernel_size=3, padding=1))
        layers.append(nn.ReLU(inplace=True))
        channels = int(width)
    layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
    return nn.Sequential(*layers)


def _stacked_blocks(spec: BackboneSpec) -> nn.ModuleList:
    blocks = []
    channels = spec.in_channels
    for widths in spec.block_channel_plan:
        blocks.append(conv_block(channels, widths))
        channels = int(widths[-1])
    return nn.ModuleList(blocks)


def _vgg16_first3(spec: BackboneSpec) -> nn.ModuleList:
    """
    First three convolutional blocks of VGG16.

    :hierarchy: [Models | Backbone | VGG16First3]
    """
    if spec.num_blocks != 3:
        raise ConfigurationError(
            f"Backbone 'vgg16-first3' requires exactly 3 blocks, got {spec.num_blocks}"
        )
    if spec.block_channel_plan != DEFAULT_BLOCK_PLAN:
        get_logger(__name__, _vgg16_first3).warning(
            f"[Backbone|Build] vgg16-first3 with non-standard widths "
            f"{spec.block_channel_plan}"
        )
    return _stacked_blocks(spec)


# Global registry mapping backbone identifiers to builders
BACKBONE_REGISTRY: Dict[str, BackboneBuilder] = {
    "vgg16-first3": _vgg16_first3,
    "conv-blocks": _stacked_blocks,
}


def register_backbone(name: str, builder: BackboneBuilder) -> None:
    """
    Register a custom backbone builder.

    :hierarchy: [Models | Backbone | Registry | Register]
    :contract:
     - pre: "builder returns nn.ModuleList with one pooling per block"
     - post: "name added to BACKBONE_REGISTRY"

    Example:
        >>> register_backbone("my-blocks", lambda spec: my_blocks(spec))
        >>> build_backbone(BackboneSpec(name="my-blocks", ...), seed=0)
    """
    BACKBONE_REGISTRY[name] = builder


def get_backbone_builder(name: str) -> BackboneBuilder:
    """
    Get builder by identifier.

    Raises:
        ConfigurationError: If name is not registered
    """
    if name not in BACKBONE_REGISTRY:
        available = ", ".join(sorted(BACKBONE_REGISTRY))
        raise ConfigurationError(
            f"Unknown backbone: '{name}'. Available backbones: {available}"
        )
    return BACKBONE_REGISTRY[name]


def list_backbones() -> List[str]:
    return sorted(BACKBONE_REGISTRY)


def load_pretrained_blocks(blocks: nn.ModuleList, path: str) -> None:
    """
    Load a block state dict saved from a compatible backbone.

    :hierarchy: [Models | Backbone | LoadPretrained]
    :contract:
     - pre: "file holds a state dict keyed like blocks.state_dict()"
     - post: "blocks carry the stored weights"

    Raises:
        CheckpointError: unreadable file or mismatching keys/shapes
    """
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as e:
        raise CheckpointError(f"Cannot read pretrained weights {path}: {e}") from e
    if isinstance(state, dict) and "blocks" in state:
        state = state["blocks"]
    try:
        blocks.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"Pretrained weights {path} do not fit backbone: {e}") from e
