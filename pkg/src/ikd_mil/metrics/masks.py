"""
Binary-mask metrics: F1, IoU and boundary Hausdorff distance.

:hierarchy: [Metrics | Masks]
:relates-to:
 - implements: "functions: binarize, f1_score, iou_score, hausdorff_distance"
 - uses: ["library: 'scikit-learn'", "library: 'scipy.ndimage'"]

:contract:
 - pre: "pred and gt have the same 2-D shape"
 - post: "F1 = 2*IoU/(1+IoU); both-empty F1/IoU = empty_score"
 - invariant: "HD symmetric, >= 0, zero iff boundary sets are equal"

:complexity: 4
:decision_cache: "HD from squared integer offsets so it matches brute force bit-for-bit"
"""

import math
from typing import Optional, Tuple, Union

import numpy as np
import torch
from scipy import ndimage
from sklearn.metrics import confusion_matrix

from ikd_mil.core.exceptions import ShapeError

ArrayLike = Union[np.ndarray, torch.Tensor]

_CROSS = ndimage.generate_binary_structure(2, 1)


def _to_numpy(values: ArrayLike) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        return values.detach().to("cpu").numpy()
    return np.asarray(values)


def _check_pair(pred: ArrayLike, gt: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    p = _to_numpy(pred).astype(bool)
    g = _to_numpy(gt).astype(bool)
    if p.shape != g.shape:
        raise ShapeError("Prediction and ground truth masks differ", g.shape, p.shape)
    return p, g


def binarize(prob_map: ArrayLike, threshold: float = 0.5) -> np.ndarray:
    """1 where ``prob_map >= threshold``, else 0 (uint8)."""
    return (_to_numpy(prob_map) >= threshold).astype(np.uint8)


def confusion_counts(pred: ArrayLike, gt: ArrayLike) -> Tuple[int, int, int, int]:
    """(tn, fp, fn, tp) pixel counts."""
    p, g = _check_pair(pred, gt)
    tn, fp, fn, tp = confusion_matrix(g.ravel(), p.ravel(), labels=[0, 1]).ravel()
    return int(tn), int(fp), int(fn), int(tp)


def f1_score(pred: ArrayLike, gt: ArrayLike, empty_score: float = 1.0) -> float:
    """
    Pixel F1 ``2TP / (2TP + FP + FN)``.

    :hierarchy: [Metrics | Masks | F1]
    :contract:
     - post: "both masks empty -> empty_score"
    """
    _, fp, fn, tp = confusion_counts(pred, gt)
    denom = 2 * tp + fp + fn
    return empty_score if denom == 0 else 2.0 * tp / denom


def iou_score(pred: ArrayLike, gt: ArrayLike, empty_score: float = 1.0) -> float:
    """
    ``|pred & gt| / |pred | gt|``; both empty -> empty_score.

    :hierarchy: [Metrics | Masks | IoU]
    """
    _, fp, fn, tp = confusion_counts(pred, gt)
    union = tp + fp + fn
    return empty_score if union == 0 else tp / union


def boundary(mask: ArrayLike) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or to the image edge."""
    m = _to_numpy(mask).astype(bool)
    return m & ~ndimage.binary_erosion(m, structure=_CROSS, border_value=0)


def _max_sq_distance(src: np.ndarray, dst: np.ndarray) -> int:
    """max over src pixels of the squared distance to the nearest dst pixel."""
    _, (iy, ix) = ndimage.distance_transform_edt(~dst, return_indices=True)
    ys, xs = np.nonzero(src)
    dy = ys - iy[ys, xs]
    dx = xs - ix[ys, xs]
    return int((dy.astype(np.int64) ** 2 + dx.astype(np.int64) ** 2).max())


def hausdorff_distance(
    pred: ArrayLike, gt: ArrayLike, empty_prediction_hd: Optional[float] = None
) -> Optional[float]:
    """
    Symmetric Hausdorff distance between the boundary pixel sets (pixel units).

    :hierarchy: [Metrics | Masks | Hausdorff]
    :contract:
     - post: "gt empty -> None"
     - post: "gt non-empty, pred empty -> empty_prediction_hd or the image diagonal"

    Args:
        pred: Predicted mask
        gt: Ground-truth mask
        empty_prediction_hd: Penalty for an empty prediction; None uses sqrt((H-1)^2 + (W-1)^2)

    Example:
        >>> a = np.zeros((8, 8)); a[0, 0] = 1
        >>> b = np.zeros((8, 8)); b[3, 4] = 1
        >>> hausdorff_distance(a, b)
        5.0
    """
    p, g = _check_pair(pred, gt)
    if not g.any():
        return None
    if not p.any():
        if empty_prediction_hd is not None:
            return float(empty_prediction_hd)
        h, w = g.shape
        return math.sqrt((h - 1) ** 2 + (w - 1) ** 2)
    bp, bg = boundary(p), boundary(g)
    sq = max(_max_sq_distance(bp, bg), _max_sq_distance(bg, bp))
    return math.sqrt(sq)
