"""
This module provides utility functions for formatting values.

"""

import json
import math
from typing import Any, Optional

import numpy as np


class NumpyEncoder(json.JSONEncoder):
    """
    Custom JSON encoder for NumPy types.

    Converts NumPy integers, floats, booleans and arrays into their standard
    Python equivalents so configs and reports can be dumped as JSON.

        :hierarchy: [Utils | Formatting | NumpyEncoder]
        :contract:
          - pre: "Input object `obj` can be a standard type or a NumPy type."
          - post: "Returns a JSON-serializable representation of the object."

    """

    def default(self, obj: Any) -> Any:
        if isinstance(obj, (np.integer, np.floating, np.bool_)):
            return obj.item()
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        return super(NumpyEncoder, self).default(obj)


def format_mean_std(
    mean: Optional[float], std: Optional[float], percent: bool = False
) -> str:
    """
    Format a mean ± std pair the way result tables print it.

        :hierarchy: [Utils | Formatting | format_mean_std]
        :contract:
          - pre: "mean/std are floats or None"
          - post: "Returns 'n/a' when mean is undefined"

    Args:
        mean: Mean value or None
        std: Standard deviation or None
        percent: Scale by 100 (F1 / IoU are printed in percent)

    Returns:
        A string such as ``"85.6±0.1"``.

    Example:
        >>> format_mean_std(0.856, 0.001, percent=True)
        '85.6±0.1'
    """
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "n/a"
    scale = 100.0 if percent else 1.0
    std_value = 0.0 if std is None or math.isnan(std) else std
    return f"{mean * scale:.1f}±{std_value * scale:.1f}"
