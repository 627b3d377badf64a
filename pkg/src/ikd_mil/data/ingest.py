"""
Patch-folder ingestion with the white-background filter.

A folder of pre-cropped raster patches plus a manifest
(``path,label,mask_path``) becomes a PatchDataset. Patches whose white
background fraction exceeds the drop threshold are discarded; survivors are
resized with the model's bilinear kernel.

:hierarchy: [Data | Ingest]
:relates-to:
 - motivated_by: "Patches that are mostly slide background carry no tissue signal"
 - implements: "functions: background_fraction, read_manifest, ingest_patch_folder"
 - uses: ["library: 'Pillow'", "library: 'pandas'", "library: 'torch'"]

:contract:
 - pre: "every raster in the folder has a manifest row"
 - post: "output ordered by file name; identical input -> identical manifest hash"

:complexity: 5
:decision_cache: "White = all channels above the cutoff"
"""

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from ikd_mil.core.config import FilterSpec
from ikd_mil.core.exceptions import DataLoadError, PatchContractError
from ikd_mil.data.patches import ImagePatch, PatchDataset
from ikd_mil.models.seg_model import bilinear_resize
from ikd_mil.utils.logger import get_logger

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


@dataclass
class IngestStats:
    """Counts reported by one ingestion run."""

    total: int = 0
    kept: int = 0
    dropped_background: int = 0
    unreadable: int = 0
    contract_violations: int = 0
    manifest_hash: str = ""

    def as_dict(self) -> Dict[str, Union[int, str]]:
        return {
            "total": self.total,
            "kept": self.kept,
            "dropped_background": self.dropped_background,
            "unreadable": self.unreadable,
            "contract_violations": self.contract_violations,
            "manifest_hash": self.manifest_hash,
        }


def background_fraction(patch: Union[ImagePatch, np.ndarray], spec: FilterSpec) -> float:
    """
    Fraction of pixels whose three channels all exceed the white cutoff.

    :hierarchy: [Data | Ingest | BackgroundFraction]
    :contract:
     - pre: "pixels (H, W, 3) in [0, 1]"
     - post: "value in [0, 1]"
    """
    pixels = patch.pixels if isinstance(patch, ImagePatch) else np.asarray(patch)
    white = (pixels > spec.white_intensity_cutoff).all(axis=-1)
    return float(white.mean()) if white.size else 0.0


def read_manifest(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read and validate a patch manifest CSV.

    Raises:
        DataLoadError: file unreadable, columns missing or labels outside {0, 1}
    """
    try:
        frame = pd.read_csv(path, dtype={"path": str, "mask_path": str}, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataLoadError(f"Cannot read manifest {path}: {e}") from e
    missing = {"path", "label"} - set(frame.columns)
    if missing:
        raise DataLoadError(f"Manifest {path} lacks columns {sorted(missing)}")
    if "mask_path" not in frame.columns:
        frame["mask_path"] = ""
    if not frame["label"].isin([0, 1]).all():
        raise DataLoadError(f"Manifest {path} has labels outside {{0, 1}}")
    if frame["path"].duplicated().any():
        dup = frame.loc[frame["path"].duplicated(), "path"].iloc[0]
        raise DataLoadError(f"Manifest {path} lists '{dup}' twice")
    return frame[["path", "label", "mask_path"]]


def _resize_pixels(pixels: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1).unsqueeze(0)
    out = bilinear_resize(t, size)[0].permute(1, 2, 0).numpy()
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Max-pool down, nearest up: any lesion pixel in a source block survives the resize."""
    t = torch.from_numpy((mask > 0).astype(np.float32))[None, None]
    if t.shape[-2:] == (size, size):
        return (mask > 0).astype(np.uint8)
    if min(t.shape[-2:]) >= size:
        out = F.adaptive_max_pool2d(t, size)
    else:
        out = F.interpolate(t, size=(size, size), mode="nearest")
    return (out[0, 0].numpy() > 0).astype(np.uint8)


def _load_one(
    folder: Path, rel_path: str, label: int, mask_rel: str, threshold: float, spec: FilterSpec
) -> Tuple[str, Optional[ImagePatch]]:
    """Returns (status, patch) with status in {'kept', 'dropped', 'unreadable', 'contract'}."""
    logger = get_logger(__name__, ingest_patch_folder)
    try:
        with Image.open(folder / rel_path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as e:
        logger.warning(f"[Ingest|Skip] unreadable image {rel_path}: {e}")
        return "unreadable", None
    if background_fraction(pixels, spec) > threshold:
        return "dropped", None

    mask = None
    if mask_rel:
        try:
            with Image.open(folder / mask_rel) as img:
                mask = (np.asarray(img.convert("L")) > 127).astype(np.uint8)
        except (OSError, UnidentifiedImageError) as e:
            logger.warning(f"[Ingest|Skip] unreadable mask {mask_rel}: {e}")
            return "unreadable", None
        if mask.shape != pixels.shape[:2]:
            logger.warning(f"[Ingest|Skip] mask {mask_rel} shape {mask.shape} differs from image {pixels.shape[:2]}")
            return "contract", None
        mask = _resize_mask(mask, spec.target_size)

    pixels = _resize_pixels(pixels, spec.target_size)
    try:
        source_id = Path(rel_path).with_suffix("").as_posix()
        patch = ImagePatch(pixels=pixels, label=label, source_id=source_id, gt_mask=mask)
    except PatchContractError as e:
        logger.warning(f"[Ingest|Skip] {rel_path}: mask contradicts label: {e}")
        return "contract", None
    return "kept", patch


def ingest_patch_folder(
    path: Union[str, Path],
    filter: FilterSpec,
    labels: Union[str, Path, pd.DataFrame],
    role: str = "train",
    max_workers: int = 4,
) -> PatchDataset:
    """
    Ingest a folder of patches listed in a manifest.

    Positives of a ``test`` split use ``test_positive_drop_threshold``;
    everything else uses ``background_drop_threshold``.

    :hierarchy: [Data | Ingest | IngestFolder]
    :contract:
     - pre: "every raster file (masks excluded) has a manifest row"
     - post: "dataset.metadata['ingest_stats'] holds IngestStats.as_dict()"

    Args:
        path: Patch folder
        filter: Background filter and target size
        labels: Manifest path or DataFrame
        role: Dataset role
        max_workers: Reader threads (output order is by file name)

    Raises:
        DataLoadError: manifest entry missing for an image file
    """
    logger = get_logger(__name__, ingest_patch_folder)
    folder = Path(path)
    if not folder.is_dir():
        raise DataLoadError(f"Patch folder {folder} does not exist")
    manifest = labels if isinstance(labels, pd.DataFrame) else read_manifest(labels)
    mask_files = {m for m in manifest["mask_path"] if m}
    entries = {row.path: (int(row.label), row.mask_path) for row in manifest.itertuples(index=False)}

    files = sorted(
        p.relative_to(folder).as_posix()
        for p in folder.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    images = [f for f in files if f not in mask_files]
    unlisted = [f for f in images if f not in entries]
    if unlisted:
        raise DataLoadError(f"Manifest has no entry for '{unlisted[0]}' ({len(unlisted)} unlisted files)")
    missing_files = sorted(set(entries) - set(images))
    for rel in missing_files:
        logger.warning(f"[Ingest|Skip] manifest lists missing file {rel}")

    def threshold_for(label: int) -> float:
        if role == "test" and label == 1:
            return filter.test_positive_drop_threshold
        return filter.background_drop_threshold

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(
            pool.map(
                lambda rel: _load_one(
                    folder, rel, entries[rel][0], entries[rel][1], threshold_for(entries[rel][0]), filter
                ),
                images,
            )
        )

    stats = IngestStats(total=len(images) + len(missing_files), unreadable=len(missing_files))
    patches: List[ImagePatch] = []
    digest = hashlib.sha256()
    for rel, (status, patch) in zip(images, results):
        if status == "kept" and patch is not None:
            patches.append(patch)
            label, mask_rel = entries[rel]
            digest.update(f"{rel},{label},{mask_rel}\n".encode("utf-8"))
        elif status == "dropped":
            stats.dropped_background += 1
        elif status == "contract":
            stats.contract_violations += 1
        else:
            stats.unreadable += 1
    stats.kept = len(patches)
    stats.manifest_hash = digest.hexdigest()
    logger.info(
        f"[Ingest|Folder] {folder} | total={stats.total} | kept={stats.kept} | "
        f"dropped={stats.dropped_background} | unreadable={stats.unreadable} | "
        f"contract_violations={stats.contract_violations}"
    )
    return PatchDataset(patches, role=role, name=folder.name, metadata={"ingest_stats": stats.as_dict()})


def resize_dataset(dataset: PatchDataset, size: int) -> PatchDataset:
    """
    Resize every patch to ``size`` with the model's bilinear kernel; masks keep every lesion pixel.

    :hierarchy: [Data | Ingest | ResizeDataset]
    """
    if dataset.image_size in (None, size):
        return dataset
    get_logger(__name__, resize_dataset).warning(
        f"[Ingest|Resize] {dataset.name or dataset.role}: {dataset.image_size}px -> {size}px"
    )
    patches = [
        ImagePatch(
            pixels=_resize_pixels(p.pixels, size),
            label=p.label,
            source_id=p.source_id,
            gt_mask=_resize_mask(p.gt_mask, size) if p.gt_mask is not None else None,
        )
        for p in dataset.evaluation_items()
    ]
    return PatchDataset(patches, role=dataset.role, name=dataset.name, metadata=dataset.metadata)
