"""
ikd_mil - weakly-supervised segmentation of histopathology patches.

Trains a multi-scale segmentation model from image-level labels only:
stage 1 learns pseudo masks with a multiple-instance objective, stage 2
refines them by iterative distillation between two copies of the model.
"""

# version
__version__ = "0.1.0"

from . import core, data, metrics, models, training, utils  # noqa: E402

__all__ = ["core", "data", "metrics", "models", "training", "utils"]
