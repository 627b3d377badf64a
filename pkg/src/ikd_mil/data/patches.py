"""
Image patches and datasets with a quarantined ground-truth accessor.

Training code only ever sees ``TrainingSample`` objects (pixels, label, id);
pixel masks are reachable through ``PatchDataset.evaluation_items()`` alone.

:hierarchy: [Data | Patches]
:relates-to:
 - motivated_by: "Weak supervision: masks exist for evaluation, never for training"
 - implements: "class: 'ImagePatch', 'TrainingSample', 'TrainingView', 'PatchDataset'"

:contract:
 - invariant: "y=0 -> gt_mask empty; y=1 with mask -> mask non-empty"
 - invariant: "datasets are immutable after construction"

:complexity: 4
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
from torch.utils.data import Dataset

from ikd_mil.core.exceptions import GroundTruthAccessError, PatchContractError

DATASET_ROLES = ("train", "validation", "test")


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ImagePatch:
    """
    RGB pixels in [0, 1], image-level label and optional evaluation mask.

    :hierarchy: [Data | Patches | ImagePatch]
    :contract:
     - pre: "pixels (H, W, 3) finite in [0, 1]; label in {0, 1}"
     - invariant: "mask/label consistency (see module contract)"
    """

    pixels: np.ndarray
    label: int
    source_id: str
    gt_mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise PatchContractError(f"{self.source_id}: pixels must be (H, W, 3), got {pixels.shape}")
        if not np.isfinite(pixels).all() or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise PatchContractError(f"{self.source_id}: pixel values must be finite and in [0, 1]")
        if int(self.label) not in (0, 1):
            raise PatchContractError(f"{self.source_id}: label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "pixels", _readonly(pixels))
        object.__setattr__(self, "label", int(self.label))
        if self.gt_mask is not None:
            mask = np.asarray(self.gt_mask)
            if mask.shape != pixels.shape[:2]:
                raise PatchContractError(
                    f"{self.source_id}: mask shape {mask.shape} differs from image {pixels.shape[:2]}"
                )
            if not np.isin(mask, (0, 1)).all():
                raise PatchContractError(f"{self.source_id}: mask must be binary")
            mask = mask.astype(np.uint8)
            has_foreground = bool(mask.any())
            if self.label == 0 and has_foreground:
                raise PatchContractError(f"{self.source_id}: normal patch has foreground in its mask")
            if self.label == 1 and not has_foreground:
                raise PatchContractError(f"{self.source_id}: positive patch has an empty mask")
            object.__setattr__(self, "gt_mask", _readonly(mask))

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def has_mask(self) -> bool:
        return self.gt_mask is not None


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """What a training consumer may see: pixels, label and id."""

    pixels: np.ndarray
    label: int
    source_id: str

    @property
    def gt_mask(self) -> Any:
        raise GroundTruthAccessError(
            f"{self.source_id}: ground-truth masks are not available to training consumers"
        )


class TrainingView(Dataset):
    """
    Mask-free torch Dataset over a patch sequence; items are TrainingSample.

    :hierarchy: [Data | Patches | TrainingView]
    :contract:
     - post: "view[i] and iteration follow dataset order; slices give lists"
    """

    def __init__(self, patches: Sequence[ImagePatch]):
        self._patches = tuple(patches)

    def __len__(self) -> int:
        return len(self._patches)

    def __getitem__(self, index: Union[int, slice]) -> Union[TrainingSample, List[TrainingSample]]:
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        p = self._patches[int(index)]
        return TrainingSample(p.pixels, p.label, p.source_id)

    def __iter__(self) -> Iterator[TrainingSample]:
        return (self[i] for i in range(len(self)))

    @property
    def gt_mask(self) -> Any:
        raise GroundTruthAccessError("Training views never carry ground-truth masks")


class PatchDataset:
    """
    Immutable ordered collection of patches tagged with a role.

    :hierarchy: [Data | Patches | PatchDataset]
    :contract:
     - pre: "all patches share one square size"
     - post: "training_view() never exposes masks"
    """

    def __init__(
        self,
        patches: Sequence[ImagePatch],
        role: str = "train",
        name: str = "",
        metadata: Optional[Dict[str, Any]] = None,
    ):
        if role not in DATASET_ROLES:
            raise PatchContractError(f"Unknown dataset role '{role}', expected one of {DATASET_ROLES}")
        patches = tuple(patches)
        sizes = {p.pixels.shape[:2] for p in patches}
        if len(sizes) > 1:
            raise PatchContractError(f"Patches differ in size: {sorted(sizes)}")
        self._patches = patches
        self.role = role
        self.name = name
        self.metadata: Dict[str, Any] = dict(metadata or {})

    def __len__(self) -> int:
        return len(self._patches)

    def __repr__(self) -> str:
        return (
            f"PatchDataset(name={self.name!r}, role={self.role!r}, size={len(self)}, "
            f"positives={self.num_positive})"
        )

    @property
    def image_size(self) -> Optional[int]:
        return self._patches[0].size if self._patches else None

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self._patches], dtype=np.int64)

    @property
    def source_ids(self) -> List[str]:
        return [p.source_id for p in self._patches]

    @property
    def num_positive(self) -> int:
        return int(self.labels.sum()) if self._patches else 0

    @property
    def gt_mask(self) -> Any:
        raise GroundTruthAccessError("Use evaluation_items() to read ground-truth masks")

    def training_view(self) -> TrainingView:
        """(pixels, label, id) records in dataset order, as a torch Dataset."""
        return TrainingView(self._patches)

    def evaluation_items(self) -> List[ImagePatch]:
        """Full patches, masks included. Evaluation only."""
        return list(self._patches)

    def subset(self, indices: Sequence[int], role: Optional[str] = None, name: Optional[str] = None) -> "PatchDataset":
        return PatchDataset(
            [self._patches[int(i)] for i in indices],
            role=role or self.role,
            name=name if name is not None else self.name,
            metadata=self.metadata,
        )

    def with_role(self, role: str) -> "PatchDataset":
        return PatchDataset(self._patches, role=role, name=self.name, metadata=self.metadata)

    def pixel_array(self) -> np.ndarray:
        """(N, H, W, 3) float32 stack."""
        if not self._patches:
            return np.zeros((0, 0, 0, 3), dtype=np.float32)
        return np.stack([p.pixels for p in self._patches])

    def __iter__(self) -> Iterator[TrainingSample]:
        return iter(self.training_view())
