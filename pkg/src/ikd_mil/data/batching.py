"""
Deterministic batching and validation splitting on torch.utils.data.

:hierarchy: [Data | Batching]
:contract:
 - pre: "batch_size >= 1"
 - post: "same seed -> same order; final short batch retained"
 - invariant: "batches carry pixels, labels and ids only"
"""

from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch.utils.data import DataLoader, random_split

from ikd_mil.core.exceptions import ConfigurationError, GroundTruthAccessError
from ikd_mil.data.patches import PatchDataset, TrainingSample, TrainingView


@dataclass(frozen=True)
class Batch:
    """
    Stacked training samples.

    Attributes:
        pixels: (B, 3, H, W) float32 tensor
        labels: (B,) int64 tensor
        source_ids: ids in batch order
    """

    pixels: torch.Tensor
    labels: torch.Tensor
    source_ids: Tuple[str, ...]

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def gt_mask(self) -> Any:
        raise GroundTruthAccessError("Batches never carry ground-truth masks")

    def to(self, device: Union[str, torch.device]) -> "Batch":
        return Batch(self.pixels.to(device), self.labels.to(device), self.source_ids)


def collate_samples(samples: Sequence[TrainingSample]) -> Batch:
    """DataLoader ``collate_fn``: HWC numpy samples to a channels-first Batch."""
    pixels = np.stack([s.pixels for s in samples]).astype(np.float32, copy=False)
    return Batch(
        pixels=torch.from_numpy(pixels).permute(0, 3, 1, 2).contiguous(),
        labels=torch.tensor([s.label for s in samples], dtype=torch.int64),
        source_ids=tuple(s.source_id for s in samples),
    )


def _seeded(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def make_loader(
    data: Union[PatchDataset, TrainingView],
    batch_size: int,
    seed: int = 0,
    shuffle: bool = True,
) -> DataLoader:
    """
    DataLoader over the mask-free view with a seeded shuffle.

    :hierarchy: [Data | Batching | MakeLoader]
    :contract:
     - pre: "batch_size >= 1"
     - post: "iteration order depends only on (len(data), seed, shuffle)"
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    view = data.training_view() if isinstance(data, PatchDataset) else data
    return DataLoader(
        view,
        batch_size=batch_size,
        shuffle=shuffle and len(view) > 0,
        generator=_seeded(seed),
        collate_fn=collate_samples,
        num_workers=0,
        drop_last=False,
    )


def make_batches(
    data: Union[PatchDataset, TrainingView],
    batch_size: int,
    seed: int = 0,
    shuffle: bool = True,
) -> List[Batch]:
    """
    Split a dataset into ordered batches.

    :hierarchy: [Data | Batching | MakeBatches]
    :contract:
     - pre: "batch_size >= 1"
     - post: "sizes are batch_size except a trailing short batch"

    Args:
        data: Dataset (its training view is used) or a training view
        batch_size: Items per batch
        seed: Shuffle seed
        shuffle: False keeps dataset order

    Example:
        >>> [len(b) for b in make_batches(ds_with_33_items, 16)]
        [16, 16, 1]
    """
    return list(make_loader(data, batch_size, seed=seed, shuffle=shuffle))


def split_validation(
    data: PatchDataset, fraction: float, seed: int
) -> Tuple[PatchDataset, Optional[PatchDataset]]:
    """
    Stratified hold-out split used for checkpoint selection.

    Each class is split with ``random_split`` under one seeded generator.

    :hierarchy: [Data | Batching | SplitValidation]
    :contract:
     - post: "round(fraction * n_class) items per class go to validation"
     - post: "fraction == 0 -> (data, None)"
    """
    if not 0.0 <= fraction < 1.0:
        raise ConfigurationError(f"validation fraction must lie in [0, 1), got {fraction}")
    if fraction == 0.0 or len(data) == 0:
        return data, None
    generator = _seeded(seed)
    labels = data.labels
    val_idx: List[int] = []
    for label in (0, 1):
        members = np.flatnonzero(labels == label).tolist()
        take = int(round(fraction * len(members)))
        if take:
            held_out, _ = random_split(members, [take, len(members) - take], generator=generator)
            val_idx.extend(members[i] for i in held_out.indices)
    if not val_idx:
        return data, None
    chosen = set(val_idx)
    train_idx = [i for i in range(len(data)) if i not in chosen]
    train = data.subset(train_idx, role="train", name=f"{data.name}-train")
    val = data.subset(sorted(val_idx), role="validation", name=f"{data.name}-validation")
    return train, val
