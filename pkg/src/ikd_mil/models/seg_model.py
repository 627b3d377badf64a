"""
Multi-scale segmentation network with weighted fusion of per-block maps.

Every backbone block feeds a 1x1 head that emits a single-channel logit map.
Logits go through a sigmoid, are bilinearly upsampled (corner-aligned) to the
input size and combined by softmax-normalized fusion weights.

:hierarchy: [Models | SegModel]
:relates-to:
 - motivated_by: "Pixel-level maps from image-level supervision via deep supervision heads"
 - implements: "class: 'SegModel', 'FusionWeights', 'MultiScaleOutput'"
 - uses: ["module: 'backbone'"]

:contract:
 - pre: "Input batch is (B, C, S, S) with S == spec.input_size"
 - post: "All maps are (B, S, S) with values in [0, 1]"
 - invariant: "fused = sum_i softmax(logits)_i * per_block_i"
 - invariant: "swap_parameters is an involution"

:complexity: 6
:decision_cache: "Sigmoid before upsampling; softmax fusion keeps fused in [0, 1]"
"""

import copy
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ikd_mil.core.config import BackboneSpec
from ikd_mil.core.exceptions import ConfigurationError, ModelIncompatibleError, ShapeError
from ikd_mil.models.backbone import get_backbone_builder, load_pretrained_blocks
from ikd_mil.utils.logger import get_logger


def bilinear_resize(images: torch.Tensor, size: int) -> torch.Tensor:
    """
    Corner-aligned bilinear resize shared by heads and ingestion.

    Args:
        images: (B, C, H, W) float tensor
        size: Target side length

    Returns:
        (B, C, size, size) tensor
    """
    if images.shape[-2:] == (size, size):
        return images
    return F.interpolate(images, size=(size, size), mode="bilinear", align_corners=True)


@dataclass
class MultiScaleOutput:
    """
    Per-block probability maps and their fused map.

    Tensors are (B, H, W) for a batch or (H, W) for one image.

    :hierarchy: [Models | SegModel | MultiScaleOutput]
    """

    per_block: List[torch.Tensor]
    fused: torch.Tensor

    @property
    def num_blocks(self) -> int:
        return len(self.per_block)

    def __getitem__(self, index: int) -> "MultiScaleOutput":
        return MultiScaleOutput(
            per_block=[m[index] for m in self.per_block], fused=self.fused[index]
        )

    def unbind(self) -> List["MultiScaleOutput"]:
        return [self[i] for i in range(self.fused.shape[0])]

    def detach(self) -> "MultiScaleOutput":
        return MultiScaleOutput(
            per_block=[m.detach() for m in self.per_block], fused=self.fused.detach()
        )


class FusionWeights(nn.Module):
    """
    Learnable fusion logits; effective weights are softmax(logits).

    :hierarchy: [Models | SegModel | FusionWeights]
    :contract:
     - invariant: "weights() strictly positive and sums to 1"
    """

    def __init__(self, num_blocks: int):
        super().__init__()
        self.logits = nn.Parameter(torch.zeros(num_blocks))

    def __len__(self) -> int:
        return int(self.logits.numel())

    def weights(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=0)

    def as_list(self) -> List[float]:
        return [float(w) for w in self.weights().detach().cpu()]


def fuse_maps(
    per_block: Sequence[torch.Tensor], weights: Union[FusionWeights, torch.Tensor]
) -> torch.Tensor:
    """
    Convex combination of per-block maps under softmax(logits).

    :hierarchy: [Models | SegModel | FuseMaps]
    :contract:
     - pre: "all maps share one shape; len(weights) == len(per_block)"
     - post: "min(per_block) <= fused <= max(per_block) elementwise"

    Args:
        per_block: Probability maps, all the same shape
        weights: FusionWeights module or raw logits vector

    Returns:
        Fused probability map

    Raises:
        ConfigurationError: weight length differs from map count
        ShapeError: maps differ in shape
    """
    logits = weights.logits if isinstance(weights, FusionWeights) else weights
    if logits.numel() != len(per_block):
        raise ConfigurationError(
            f"Fusion weights have length {logits.numel()} but {len(per_block)} maps were given"
        )
    shape = per_block[0].shape
    for m in per_block[1:]:
        if m.shape != shape:
            raise ShapeError("Per-block maps differ in shape", tuple(shape), tuple(m.shape))
    stacked = torch.stack(list(per_block), dim=0)
    w = torch.softmax(logits, dim=0).to(stacked.dtype)
    return (w.view(-1, *([1] * len(shape))) * stacked).sum(dim=0)


class SegModel(nn.Module):
    """
    Backbone blocks + per-block 1x1 heads + fusion weights.

    Two instances play the teacher and student roles during distillation.

    :hierarchy: [Models | SegModel | SegModel]
    :contract:
     - invariant: "len(heads) == len(blocks) == len(fusion)"
     - invariant: "forward is deterministic (no stochastic layers)"
    """

    def __init__(self, spec: BackboneSpec, blocks: nn.ModuleList):
        super().__init__()
        self.spec = spec
        self.blocks = blocks
        self.heads = nn.ModuleList(
            nn.Conv2d(int(widths[-1]), 1, kernel_size=1) for widths in spec.block_channel_plan
        )
        self.fusion = FusionWeights(len(blocks))
        if len(self.heads) != len(self.blocks):
            raise ConfigurationError(
                f"Backbone built {len(self.blocks)} blocks for a {len(self.heads)}-block plan"
            )

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def input_size(self) -> int:
        return self.spec.input_size

    def check_input(self, x: torch.Tensor) -> None:
        expected = (self.spec.in_channels, self.input_size, self.input_size)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError("Input batch does not match model input", expected, tuple(x.shape[1:]))

    def per_block_maps(self, x: torch.Tensor) -> List[torch.Tensor]:
        """Sigmoid head outputs upsampled to input size, each (B, H, W)."""
        size = x.shape[-1]
        maps = []
        features = x
        for block, head in zip(self.blocks, self.heads):
            features = block(features)
            prob = torch.sigmoid(head(features))
            maps.append(bilinear_resize(prob, size).squeeze(1))
        return maps

    def forward(self, x: torch.Tensor) -> MultiScaleOutput:
        self.check_input(x)
        per_block = self.per_block_maps(x)
        return MultiScaleOutput(per_block=per_block, fused=fuse_maps(per_block, self.fusion))

    def parameter_store(self) -> Dict[str, torch.Tensor]:
        """Flat, enumerable view of all trainable values (fusion logits included)."""
        return dict(self.named_parameters())

    def backbone_parameters(self) -> Iterator[nn.Parameter]:
        """Parameters of blocks and heads (everything except fusion logits)."""
        for name, param in self.named_parameters():
            if not name.startswith("fusion."):
                yield param

    def set_trainable(self, backbone: bool, fusion: bool) -> None:
        for param in self.backbone_parameters():
            param.requires_grad_(backbone)
        self.fusion.logits.requires_grad_(fusion)


def build_backbone(spec: BackboneSpec, seed: int) -> SegModel:
    """
    Build a deterministically initialized SegModel.

    :hierarchy: [Models | SegModel | BuildBackbone]
    :contract:
     - pre: "spec valid; seed any integer"
     - post: "same (spec, seed) gives bit-identical parameters; fusion logits are zeros"

    Args:
        spec: Backbone description
        seed: Initialization seed (global RNG state is left untouched)

    Returns:
        SegModel on CPU

    Raises:
        ConfigurationError: unknown backbone name or invalid spec
    """
    logger = get_logger(__name__, build_backbone)
    builder = get_backbone_builder(spec.name)
    spec.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        blocks = builder(spec)
        model = SegModel(spec, blocks)
    if spec.pretrained_path:
        load_pretrained_blocks(model.blocks, spec.pretrained_path)
        logger.info(f"[SegModel|Build] Loaded pretrained blocks from {spec.pretrained_path}")
    logger.debug(
        f"Built {spec.name} | blocks={spec.num_blocks} | factors={spec.upsample_factors} | seed={seed}"
    )
    return model


def _as_batch_tensor(batch: Any, device: Optional[torch.device]) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        x = batch
    else:
        # sequence of ImagePatch-like objects with (H, W, 3) pixels
        arrays = [np.asarray(p.pixels, dtype=np.float32) for p in batch]
        x = torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).contiguous()
    if device is not None:
        x = x.to(device)
    return x


def forward_multiscale(model: SegModel, batch: Any) -> List[MultiScaleOutput]:
    """
    Per-image multi-scale outputs for a batch.

    :hierarchy: [Models | SegModel | ForwardMultiscale]
    :contract:
     - pre: "batch is a (B, C, S, S) tensor or a sequence of patches of size S"
     - post: "one MultiScaleOutput per image, maps (S, S) in [0, 1]"

    Raises:
        ShapeError: spatial size differs from model input size
    """
    device = next(model.parameters()).device
    x = _as_batch_tensor(batch, device)
    return model(x).unbind()


def _structure_signature(model: nn.Module) -> List[tuple]:
    sig = [(name, tuple(p.shape)) for name, p in model.named_parameters()]
    sig += [(name, tuple(b.shape)) for name, b in model.named_buffers()]
    return sig


def check_compatible(a: nn.Module, b: nn.Module) -> None:
    """
    Raise ModelIncompatibleError naming the first differing parameter.
    """
    sig_a = _structure_signature(a)
    sig_b = _structure_signature(b)
    for (name_a, shape_a), (name_b, shape_b) in zip(sig_a, sig_b):
        if name_a != name_b or shape_a != shape_b:
            raise ModelIncompatibleError(
                f"Models differ at parameter '{name_a}': {shape_a} vs '{name_b}' {shape_b}",
                parameter_name=name_a,
            )
    if len(sig_a) != len(sig_b):
        longer = sig_a if len(sig_a) > len(sig_b) else sig_b
        name = longer[min(len(sig_a), len(sig_b))][0]
        raise ModelIncompatibleError(
            f"Models differ in parameter count; first unmatched parameter '{name}'",
            parameter_name=name,
        )


@torch.no_grad()
def swap_parameters(a: SegModel, b: SegModel) -> None:
    """
    Exchange parameter stores (fusion logits included) of two models in place.

    requires_grad flags stay with the model, so a frozen teacher stays frozen.

    :hierarchy: [Models | SegModel | SwapParameters]
    :contract:
     - pre: "a and b structurally identical"
     - post: "a holds b's former values and vice versa, bit-exact"

    Raises:
        ModelIncompatibleError: structural mismatch
    """
    check_compatible(a, b)
    pairs = list(zip(a.parameters(), b.parameters())) + list(zip(a.buffers(), b.buffers()))
    for pa, pb in pairs:
        tmp = pa.detach().clone()
        pa.copy_(pb)
        pb.copy_(tmp)


def clone_model(model: SegModel) -> SegModel:
    """Independent deep copy (parameters, buffers and spec)."""
    return copy.deepcopy(model)
