"""Patch datasets: synthetic generation, folder ingestion, batching and storage."""

from ikd_mil.data.batching import Batch, collate_samples, make_batches, make_loader, split_validation
from ikd_mil.data.ingest import (
    IngestStats,
    background_fraction,
    ingest_patch_folder,
    read_manifest,
    resize_dataset,
)
from ikd_mil.data.patches import ImagePatch, PatchDataset, TrainingSample
from ikd_mil.data.storage import load_dataset, save_dataset
from ikd_mil.data.synthetic import blob_area_bounds, generate_synthetic_dataset

__all__ = [
    "Batch",
    "ImagePatch",
    "IngestStats",
    "PatchDataset",
    "TrainingSample",
    "background_fraction",
    "blob_area_bounds",
    "collate_samples",
    "generate_synthetic_dataset",
    "ingest_patch_folder",
    "load_dataset",
    "make_batches",
    "make_loader",
    "read_manifest",
    "resize_dataset",
    "save_dataset",
    "split_validation",
]
