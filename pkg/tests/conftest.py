"""
This file contains shared fixtures for the test suite.

"""

import os
import sys

# Add src to path to allow imports without installation
sys.path.append(os.path.abspath("src"))

import numpy as np
import pytest

from ikd_mil.core.cache.backend import _memory_cache
from ikd_mil.core.config import BackboneSpec, BlobParams, SynthSpec, TrainConfig
from ikd_mil.data import ImagePatch, PatchDataset, generate_synthetic_dataset
from ikd_mil.models import SegModel, build_backbone, get_backbone_builder


@pytest.fixture(autouse=True)
def clear_dataset_cache(monkeypatch):
    """
    Clear the process-wide dataset cache before each test.

    :hierarchy: [Testing | Fixtures | Cache Management]
    :contract:
     - pre: "Test is starting"
     - post: "No generated dataset leaks between tests; disk cache disabled"
    """
    monkeypatch.delenv("IKD_MIL_CACHE", raising=False)
    _memory_cache.clear()
    yield
    _memory_cache.clear()


@pytest.fixture
def tiny_spec():
    """Three single-conv blocks at 16 px: fast enough for per-test training."""
    return BackboneSpec(name="conv-blocks", block_channel_plan=[[4], [4], [4]], input_size=16)


@pytest.fixture
def tiny_model(tiny_spec):
    return build_backbone(tiny_spec, seed=0)


@pytest.fixture
def tiny_synth():
    return SynthSpec(
        count_pos=6,
        count_neg=6,
        image_size=16,
        blobs=BlobParams(count_min=1, count_max=1, radius_min=2, radius_max=3),
        seed=0,
    )


@pytest.fixture
def tiny_dataset(tiny_synth):
    return generate_synthetic_dataset(tiny_synth, role="train", name="tiny")


@pytest.fixture
def tiny_val(tiny_synth):
    spec = SynthSpec(
        count_pos=2,
        count_neg=2,
        image_size=16,
        blobs=tiny_synth.blobs,
        seed=tiny_synth.seed + 7,
    )
    return generate_synthetic_dataset(spec, role="validation", name="tiny-val")


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig(
        learning_rate=1e-3,
        batch_size=4,
        mil_epochs=2,
        fusion_fit_epochs=2,
        switch_period_epochs=2,
        total_distill_epochs=4,
        eval_batch_size=8,
        validation_fraction=0.25,
    )


class OracleModel(SegModel):
    """
    SegModel whose block maps are the three input channels.

    Channel 0 carries the lesion mask, channels 1 and 2 carry noise, so the
    correct fusion weights are known in advance.
    """

    def per_block_maps(self, x):
        return [x[:, 0], x[:, 1], x[:, 2]]


@pytest.fixture
def oracle_model():
    spec = BackboneSpec(name="conv-blocks", block_channel_plan=[[2], [2], [2]], input_size=16)
    return OracleModel(spec, get_backbone_builder("conv-blocks")(spec))


@pytest.fixture
def oracle_dataset():
    """
    8 positives whose channel 0 is a mask covering 13 of 16 rows, 8 negatives
    with an empty channel 0; channels 1-2 are uniform noise.
    """
    rng = np.random.default_rng(3)
    patches = []
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[:13] = 1
    for i in range(16):
        positive = i < 8
        pixels = rng.uniform(0.0, 1.0, size=(16, 16, 3)).astype(np.float32)
        pixels[..., 0] = mask if positive else 0.0
        patches.append(
            ImagePatch(
                pixels=pixels,
                label=int(positive),
                source_id=f"oracle-{i:02d}",
                gt_mask=mask if positive else np.zeros_like(mask),
            )
        )
    return PatchDataset(patches, role="train", name="oracle")
