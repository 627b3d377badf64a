"""
Utils module - logging, hashing and formatting helpers.

:hierarchy: [Utils]
:exports: ["logger", "hashing", "formatting"]

Plot helpers live in ikd_mil.utils.plots and are imported directly.
"""

from ikd_mil.utils.formatting import NumpyEncoder, format_mean_std
from ikd_mil.utils.logger import get_logger, setup_logging

__all__ = ["NumpyEncoder", "format_mean_std", "get_logger", "setup_logging"]
