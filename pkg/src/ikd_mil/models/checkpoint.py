"""
Versioned checkpoint container for SegModel parameters.

:hierarchy: [Models | Checkpoint]
:relates-to:
 - motivated_by: "Stage 1 and every distillation cycle must be restartable"
 - implements: "class: 'Checkpoint'; functions: save_checkpoint, load_checkpoint"

:contract:
 - pre: "stage_tag is 'mil' or 'distill-cycle-<k>'"
 - post: "load(save(c)) restores bit-identical parameters"
 - invariant: "format_version is checked on load"

:complexity: 3
"""

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import torch

from ikd_mil.core.config import BackboneSpec, config_to_dict, dataclass_from_dict
from ikd_mil.core.exceptions import CheckpointError, ConfigParseError, MissingArtifactError
from ikd_mil.models.seg_model import SegModel, build_backbone, check_compatible
from ikd_mil.utils.hashing import state_checksum
from ikd_mil.utils.logger import get_logger

CHECKPOINT_FORMAT_VERSION = 1
STAGE_TAG_PATTERN = re.compile(r"^(mil|distill-cycle-\d+)$")


def cycle_stage_tag(cycle_index: int) -> str:
    return f"distill-cycle-{cycle_index}"


@dataclass
class Checkpoint:
    """
    Backbone spec, named parameter tensors, fusion logits and stage tag.

    :hierarchy: [Models | Checkpoint | Checkpoint]
    """

    spec: BackboneSpec
    state_dict: Dict[str, torch.Tensor]
    stage_tag: str
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not STAGE_TAG_PATTERN.match(self.stage_tag):
            raise CheckpointError(
                f"Invalid stage tag '{self.stage_tag}' (expected 'mil' or 'distill-cycle-<k>')"
            )

    @classmethod
    def from_model(
        cls, model: SegModel, stage_tag: str, metadata: Optional[Dict[str, Any]] = None
    ) -> "Checkpoint":
        state = {k: v.detach().to("cpu").clone() for k, v in model.state_dict().items()}
        return cls(spec=model.spec, state_dict=state, stage_tag=stage_tag, metadata=dict(metadata or {}))

    @property
    def fusion_logits(self) -> torch.Tensor:
        return self.state_dict["fusion.logits"]

    @property
    def fusion_weights(self) -> List[float]:
        return [float(w) for w in torch.softmax(self.fusion_logits, dim=0)]

    def checksum(self) -> str:
        return state_checksum(self.state_dict)

    def _skeleton(self) -> SegModel:
        """Architecture only; the saved state replaces any pretrained weights."""
        model = build_backbone(dataclasses.replace(self.spec, pretrained_path=None), seed=0)
        model.spec = self.spec
        return model

    def load_into(self, model: SegModel) -> SegModel:
        reference = self._skeleton()
        check_compatible(reference, model)
        model.load_state_dict(self.state_dict, strict=True)
        return model

    def to_model(self, device: Union[str, torch.device] = "cpu") -> SegModel:
        model = self._skeleton()
        model.load_state_dict(self.state_dict, strict=True)
        return model.to(device)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """
    Write a checkpoint with ``torch.save``.

    :hierarchy: [Models | Checkpoint | Save]
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "backbone": config_to_dict(checkpoint.spec),
        "state_dict": checkpoint.state_dict,
        "fusion_logits": checkpoint.fusion_logits.clone(),
        "stage_tag": checkpoint.stage_tag,
        "metadata": checkpoint.metadata,
    }
    torch.save(payload, path)
    get_logger(__name__, save_checkpoint).debug(
        f"Saved {checkpoint.stage_tag} checkpoint to {path}"
    )
    return path


def load_checkpoint(path: Union[str, Path], hint: str = "") -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    :hierarchy: [Models | Checkpoint | Load]
    :contract:
     - post: "Returns Checkpoint with validated spec and stage tag"

    Raises:
        MissingArtifactError: file does not exist
        CheckpointError: unreadable, wrong version or malformed content
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, hint)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        version = payload.get("format_version") if isinstance(payload, dict) else None
        raise CheckpointError(
            f"Checkpoint {path} has format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        spec = dataclass_from_dict(BackboneSpec, payload["backbone"], "backbone")
    except (ConfigParseError, KeyError) as e:
        raise CheckpointError(f"Checkpoint {path} has a malformed backbone spec: {e}") from e
    missing = [k for k in ("state_dict", "fusion_logits", "stage_tag") if k not in payload]
    if not missing and "fusion.logits" not in payload["state_dict"]:
        missing = ["state_dict['fusion.logits']"]
    if missing:
        raise CheckpointError(f"Checkpoint {path} lacks required key {missing[0]}")
    state = payload["state_dict"]
    if not torch.equal(state["fusion.logits"], payload["fusion_logits"]):
        raise CheckpointError(f"Checkpoint {path} has inconsistent fusion logits")
    return Checkpoint(
        spec=spec,
        state_dict=state,
        stage_tag=payload["stage_tag"],
        metadata=payload.get("metadata", {}),
    )
