"""
Dataset persistence: exact arrays in ``dataset.npz`` plus a patch manifest.

The manifest (``path,label,mask_path``) points at PNG renderings written
next to it, so a saved dataset is also a valid folder for ingestion.

:hierarchy: [Data | Storage]
:relates-to:
 - implements: "functions: save_dataset, load_dataset"
 - uses: ["library: 'numpy'", "library: 'pandas'", "library: 'Pillow'"]
:complexity: 3
"""

from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from PIL import Image

from ikd_mil.core.exceptions import DataLoadError, MissingArtifactError
from ikd_mil.data.patches import ImagePatch, PatchDataset
from ikd_mil.utils.logger import get_logger

DATASET_FILE = "dataset.npz"
MANIFEST_FILE = "manifest.csv"
MANIFEST_COLUMNS = ["path", "label", "mask_path"]


def save_dataset(dataset: PatchDataset, directory: Union[str, Path], write_images: bool = True) -> Path:
    """
    Save a dataset to ``directory``.

    :hierarchy: [Data | Storage | Save]
    :contract:
     - post: "load_dataset(directory) reproduces pixels, labels, masks and ids exactly"
    """
    logger = get_logger(__name__, save_dataset)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    items = dataset.evaluation_items()
    size = dataset.image_size or 0
    masks = np.zeros((len(items), size, size), dtype=np.uint8)
    has_mask = np.zeros(len(items), dtype=bool)
    for i, patch in enumerate(items):
        if patch.gt_mask is not None:
            masks[i] = patch.gt_mask
            has_mask[i] = True
    np.savez_compressed(
        directory / DATASET_FILE,
        pixels=dataset.pixel_array() if items else np.zeros((0, 0, 0, 3), np.float32),
        labels=dataset.labels,
        masks=masks,
        has_mask=has_mask,
        source_ids=np.array(dataset.source_ids, dtype=str),
        role=np.array(dataset.role),
        name=np.array(dataset.name),
    )

    rows = []
    for patch in items:
        stem = patch.source_id.replace("/", "__")
        image_rel = f"images/{stem}.png"
        mask_rel = f"masks/{stem}.png" if patch.gt_mask is not None else ""
        if write_images:
            (directory / "images").mkdir(exist_ok=True)
            Image.fromarray(np.round(patch.pixels * 255).astype(np.uint8)).save(directory / image_rel)
            if mask_rel:
                (directory / "masks").mkdir(exist_ok=True)
                Image.fromarray(patch.gt_mask * 255).save(directory / mask_rel)
        rows.append({"path": image_rel, "label": patch.label, "mask_path": mask_rel})
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(directory / MANIFEST_FILE, index=False)
    logger.info(f"[Storage|Save] {len(items)} patches -> {directory}")
    return directory


def load_dataset(directory: Union[str, Path], role: Optional[str] = None) -> PatchDataset:
    """
    Load a dataset written by save_dataset.

    :hierarchy: [Data | Storage | Load]

    Raises:
        MissingArtifactError: dataset.npz absent
        DataLoadError: archive unreadable
    """
    path = Path(directory) / DATASET_FILE
    if not path.exists():
        raise MissingArtifactError(path, "run 'ikd-mil generate-data' first")
    try:
        with np.load(path, allow_pickle=False) as archive:
            pixels = archive["pixels"]
            labels = archive["labels"]
            masks = archive["masks"]
            has_mask = archive["has_mask"]
            source_ids = [str(s) for s in archive["source_ids"]]
            stored_role = str(archive["role"])
            name = str(archive["name"])
    except (OSError, KeyError, ValueError) as e:
        raise DataLoadError(f"Cannot read dataset archive {path}: {e}") from e
    patches = [
        ImagePatch(
            pixels=pixels[i],
            label=int(labels[i]),
            source_id=source_ids[i],
            gt_mask=masks[i] if has_mask[i] else None,
        )
        for i in range(len(source_ids))
    ]
    return PatchDataset(patches, role=role or stored_role, name=name)
