"""
Tests for dataset storage and patch-folder ingestion.

:hierarchy: [Testing | Unit Tests | Data | Ingest]
:complexity: 4
"""

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from ikd_mil.core.config import FilterSpec
from ikd_mil.core.exceptions import DataLoadError, MissingArtifactError
from ikd_mil.data import (
    background_fraction,
    ingest_patch_folder,
    load_dataset,
    read_manifest,
    resize_dataset,
    save_dataset,
)

TISSUE = (128, 60, 110)


def _image(white_rows: int, size: int = 20) -> np.ndarray:
    pixels = np.empty((size, size, 3), dtype=np.uint8)
    pixels[:] = TISSUE
    pixels[:white_rows] = 255
    return pixels


def _write(folder, rel, array):
    path = folder / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)


@pytest.fixture
def patch_folder(tmp_path):
    """
    Four 20x20 patches:
      tissue.png   normal, no white
      white.png    normal, all white
      lesion.png   positive, 85% white, mask on the tissue rows
      sub/mixed.png normal, 50% white
    """
    folder = tmp_path / "patches"
    _write(folder, "tissue.png", _image(0))
    _write(folder, "white.png", _image(20))
    _write(folder, "lesion.png", _image(17))
    _write(folder, "sub/mixed.png", _image(10))
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[17:, 5:15] = 255
    _write(folder, "masks/lesion.png", mask)
    manifest = pd.DataFrame(
        {
            "path": ["tissue.png", "white.png", "lesion.png", "sub/mixed.png"],
            "label": [0, 0, 1, 0],
            "mask_path": ["", "", "masks/lesion.png", ""],
        }
    )
    manifest_path = tmp_path / "manifest.csv"
    manifest.to_csv(manifest_path, index=False)
    return folder, manifest_path


class TestBackgroundFilter:
    def test_fraction(self):
        pixels = _image(5).astype(np.float32) / 255.0

        assert background_fraction(pixels, FilterSpec()) == pytest.approx(0.25)

    def test_train_role_drops_mostly_white(self, patch_folder):
        folder, manifest = patch_folder

        data = ingest_patch_folder(folder, FilterSpec(target_size=20), manifest, role="train")

        assert data.source_ids == ["sub/mixed", "tissue"]
        stats = data.metadata["ingest_stats"]
        assert stats["total"] == 4
        assert stats["kept"] == 2
        assert stats["dropped_background"] == 2

    def test_test_role_keeps_positives_below_relaxed_threshold(self, patch_folder):
        folder, manifest = patch_folder

        data = ingest_patch_folder(folder, FilterSpec(target_size=20), manifest, role="test")

        assert "lesion" in data.source_ids
        lesion = next(p for p in data.evaluation_items() if p.source_id == "lesion")
        assert lesion.label == 1
        assert int(lesion.gt_mask.sum()) == 30

    def test_resized_on_ingest(self, patch_folder):
        folder, manifest = patch_folder

        data = ingest_patch_folder(folder, FilterSpec(target_size=16), manifest, role="test")

        assert data.image_size == 16
        lesion = next(p for p in data.evaluation_items() if p.source_id == "lesion")
        assert lesion.gt_mask.shape == (16, 16)
        assert lesion.gt_mask.any()

    def test_manifest_hash_is_stable(self, patch_folder):
        folder, manifest = patch_folder

        a = ingest_patch_folder(folder, FilterSpec(target_size=20), manifest)
        b = ingest_patch_folder(folder, FilterSpec(target_size=20), manifest, max_workers=1)

        assert a.metadata["ingest_stats"]["manifest_hash"] == b.metadata["ingest_stats"]["manifest_hash"]


class TestManifestErrors:
    def test_unlisted_file(self, patch_folder):
        folder, manifest = patch_folder
        _write(folder, "extra.png", _image(0))

        with pytest.raises(DataLoadError, match="extra.png"):
            ingest_patch_folder(folder, FilterSpec(target_size=20), manifest)

    def test_missing_file_counted_unreadable(self, patch_folder):
        folder, manifest = patch_folder
        (folder / "tissue.png").unlink()

        data = ingest_patch_folder(folder, FilterSpec(target_size=20), manifest)

        assert data.metadata["ingest_stats"]["unreadable"] == 1
        assert data.source_ids == ["sub/mixed"]

    def test_bad_labels(self, tmp_path):
        path = tmp_path / "m.csv"
        pd.DataFrame({"path": ["a.png"], "label": [3]}).to_csv(path, index=False)

        with pytest.raises(DataLoadError):
            read_manifest(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        pd.DataFrame({"file": ["a.png"]}).to_csv(path, index=False)

        with pytest.raises(DataLoadError, match="lacks columns"):
            read_manifest(path)

    def test_missing_folder(self, tmp_path):
        with pytest.raises(DataLoadError):
            ingest_patch_folder(tmp_path / "none", FilterSpec(), pd.DataFrame(columns=["path", "label", "mask_path"]))


class TestStorage:
    def test_round_trip(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset, tmp_path / "train")

        loaded = load_dataset(tmp_path / "train")

        assert loaded.source_ids == tiny_dataset.source_ids
        assert loaded.role == "train"
        np.testing.assert_array_equal(loaded.pixel_array(), tiny_dataset.pixel_array())
        for a, b in zip(loaded.evaluation_items(), tiny_dataset.evaluation_items()):
            np.testing.assert_array_equal(a.gt_mask, b.gt_mask)

    def test_saved_folder_is_ingestible(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset, tmp_path / "train")
        manifest = read_manifest(tmp_path / "train" / "manifest.csv")

        data = ingest_patch_folder(
            tmp_path / "train", FilterSpec(target_size=16), manifest, role="test"
        )

        assert len(data) == len(tiny_dataset)
        assert sorted(data.labels.tolist()) == sorted(tiny_dataset.labels.tolist())
        assert data.source_ids[0] == "images/tiny-neg-00006"

    def test_missing_archive(self, tmp_path):
        with pytest.raises(MissingArtifactError, match="generate-data"):
            load_dataset(tmp_path)

    def test_role_override(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset, tmp_path, write_images=False)

        assert load_dataset(tmp_path, role="test").role == "test"


def test_resize_dataset(tiny_dataset):
    resized = resize_dataset(tiny_dataset, 32)

    assert resized.image_size == 32
    assert resized.labels.tolist() == tiny_dataset.labels.tolist()
    assert all(p.gt_mask.any() == bool(p.label) for p in resized.evaluation_items())
    assert resize_dataset(tiny_dataset, 16) is tiny_dataset


def test_filter_keeps_exactly_the_textured_patches(tmp_path):
    folder = tmp_path / "mixed"
    rows = []
    for i in range(10):
        name = f"p{i}.png"
        _write(folder, name, _image(20 if i < 3 else 0))
        rows.append({"path": name, "label": 0, "mask_path": ""})

    data = ingest_patch_folder(folder, FilterSpec(target_size=20), pd.DataFrame(rows))

    assert len(data) == 7
    assert data.source_ids == [f"p{i}" for i in range(3, 10)]


class TestMaskResize:
    def test_single_pixel_lesion_survives_downscale(self, tmp_path):
        folder = tmp_path / "large"
        _write(folder, "spot.png", _image(0, size=512))
        mask = np.zeros((512, 512), dtype=np.uint8)
        mask[301, 77] = 255
        _write(folder, "masks/spot.png", mask)
        manifest = pd.DataFrame({"path": ["spot.png"], "label": [1], "mask_path": ["masks/spot.png"]})

        data = ingest_patch_folder(folder, FilterSpec(target_size=256), manifest, role="test")

        (patch,) = data.evaluation_items()
        assert patch.gt_mask.shape == (256, 256)
        assert patch.gt_mask.sum() == 1
        assert patch.gt_mask[150, 38] == 1

    def test_upscale_keeps_lesion(self, tiny_dataset):
        resized = resize_dataset(tiny_dataset, 48)

        for before, after in zip(tiny_dataset.evaluation_items(), resized.evaluation_items()):
            assert after.gt_mask.sum() == 9 * before.gt_mask.sum()


class TestContractSkips:
    def test_label_contradicting_mask_is_skipped(self, patch_folder):
        folder, manifest = patch_folder
        _write(folder, "masks/empty.png", np.zeros((20, 20), dtype=np.uint8))
        frame = pd.read_csv(manifest, keep_default_na=False)
        frame.loc[frame["path"] == "tissue.png", ["label", "mask_path"]] = [1, "masks/empty.png"]

        data = ingest_patch_folder(folder, FilterSpec(target_size=20), frame, role="test")

        stats = data.metadata["ingest_stats"]
        assert "tissue" not in data.source_ids
        assert "lesion" in data.source_ids
        assert stats["contract_violations"] == 1
        assert stats["kept"] == len(data)

    def test_mask_shape_mismatch_is_skipped(self, patch_folder):
        folder, manifest = patch_folder
        mask = np.zeros((10, 10), dtype=np.uint8)
        mask[2:4, 2:4] = 255
        _write(folder, "masks/lesion.png", mask)

        data = ingest_patch_folder(folder, FilterSpec(target_size=20), manifest, role="test")

        assert "lesion" not in data.source_ids
        assert data.metadata["ingest_stats"]["contract_violations"] == 1
