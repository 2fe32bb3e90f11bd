"""Oracle value functions, task loss and evaluation metrics.

Set overlap between a candidate output ``y`` and ground truth ``y_star`` is
extended to continuous ``y`` by elementwise min (intersection) and max (union).
"""

from __future__ import annotations

import enum

import numpy as np

from . import tensor as T

CE_EPS = 1e-7
THRESHOLD_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


class OracleKind(str, enum.Enum):
    IOU = "iou"
    F1 = "f1"
    PIXELWISE_F1 = "pixelwise_f1"


def _check_pair(y, y_star):
    y = np.asarray(y, dtype=np.float64)
    y_star = np.asarray(y_star, dtype=np.float64)
    if y.shape != y_star.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_star.shape}")
    for name, arr in (("y", y), ("y_star", y_star)):
        if arr.size and (np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError(f"{name} entries must lie in [0, 1]")
    return y, y_star


def relaxed_intersection(y, y_star, axis=-1) -> np.ndarray | float:
    y, y_star = _check_pair(y, y_star)
    return np.minimum(y, y_star).sum(axis=axis)


def relaxed_union(y, y_star, axis=-1) -> np.ndarray | float:
    y, y_star = _check_pair(y, y_star)
    return np.maximum(y, y_star).sum(axis=axis)


def _ratio(inter, union, kind):
    inter = np.asarray(inter, dtype=np.float64)
    union = np.asarray(union, dtype=np.float64)
    num = inter if kind is OracleKind.IOU else 2.0 * inter
    den = union if kind is OracleKind.IOU else inter + union
    # both sides empty counts as perfect agreement
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 1.0)


def batch_oracle(kind: OracleKind | str, y, y_star) -> np.ndarray:
    """Oracle values reducing over the last axis.

    For IOU/F1 the last axis holds the M labels; for PIXELWISE_F1 it holds the
    C classes of each pixel, so the result keeps every leading axis.
    """
    kind = OracleKind(kind)
    y, y_star = _check_pair(y, y_star)
    inter = np.minimum(y, y_star).sum(axis=-1)
    union = np.maximum(y, y_star).sum(axis=-1)
    return _ratio(inter, union, OracleKind.IOU if kind is OracleKind.IOU else OracleKind.F1)


def oracle_value(kind: OracleKind | str, y, y_star):
    """v*(y, y_star) for one example.

    IOU and F1 take vectors and return a scalar. PIXELWISE_F1 takes a (W, C)
    array and returns the per-pixel F1 vector of length W.
    """
    kind = OracleKind(kind)
    y = np.asarray(y, dtype=np.float64)
    if kind is OracleKind.PIXELWISE_F1:
        if y.ndim != 2:
            raise ValueError(f"PIXELWISE_F1 needs a (W, C) array, got shape {y.shape}")
        return batch_oracle(kind, y, y_star)
    if y.ndim != 1:
        raise ValueError(f"{kind.name} needs a vector, got shape {y.shape}")
    return float(batch_oracle(kind, y, y_star))


def cross_entropy(y_pred, y_star) -> T.Tensor:
    """Binary cross-entropy averaged over every element (labels, pixels and batch)."""
    y_pred = T.as_tensor(y_pred)
    y_star = np.asarray(y_star, dtype=y_pred.data.dtype)
    if y_pred.shape != y_star.shape:
        raise ValueError(f"cross_entropy: shape mismatch {y_pred.shape} vs {y_star.shape}")
    p = T.clip(y_pred, CE_EPS, 1.0 - CE_EPS)
    ll = T.add(T.mul_elem(y_star, T.log(p)), T.mul_elem(1.0 - y_star, T.log(T.sub(1.0, p))))
    return T.mul_elem(T.mean(ll), -1.0)


def f1_scores(y_pred, y_star, threshold: float) -> np.ndarray:
    """Per-example F1 of ``y_pred`` binarized at ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    y_bin = (np.asarray(y_pred) >= threshold).astype(np.float64)
    y_star = np.asarray(y_star, dtype=np.float64)
    inter = (y_bin * y_star).sum(axis=-1)
    union = np.maximum(y_bin, y_star).sum(axis=-1)
    return _ratio(inter, union, OracleKind.F1)


def discrete_f1_eval(y_pred, y_star, threshold: float = 0.5) -> float:
    """Example-averaged F1 after binarization, in [0, 1]."""
    y_pred = np.atleast_2d(y_pred)
    y_star = np.atleast_2d(y_star)
    if len(y_pred) == 0:
        return 0.0
    return float(f1_scores(y_pred, y_star, threshold).mean())


def tune_threshold(y_pred, y_star, grid=THRESHOLD_GRID) -> tuple[float, float]:
    """Pick the grid threshold with the best example-averaged F1; ties go to the smaller threshold."""
    best_t, best = grid[0], -1.0
    for t in grid:
        score = discrete_f1_eval(y_pred, y_star, t)
        if score > best:
            best_t, best = float(t), score
    return best_t, best


def mean_iou(mask_pred, mask_star) -> float:
    """Mean per-image IOU of the foreground classes.

    Both masks are (N, H, W, C) with class 0 as background; predictions are
    assigned to their argmax class.
    """
    mask_pred = np.asarray(mask_pred)
    mask_star = np.asarray(mask_star)
    c = mask_pred.shape[-1]
    pred = np.eye(c)[mask_pred.argmax(axis=-1)][..., 1:]
    true = mask_star[..., 1:] > 0.5
    n = pred.shape[0]
    pred = pred.reshape(n, -1).astype(bool)
    true = true.reshape(n, -1)
    inter = (pred & true).sum(axis=1)
    union = (pred | true).sum(axis=1)
    return float(_ratio(inter, union, OracleKind.IOU).mean())


def global_iou(mask_pred, mask_star) -> float:
    """Foreground IOU pooled over every pixel of the set."""
    mask_pred = np.asarray(mask_pred)
    mask_star = np.asarray(mask_star)
    c = mask_pred.shape[-1]
    pred = np.eye(c)[mask_pred.argmax(axis=-1)][..., 1:].astype(bool)
    true = mask_star[..., 1:] > 0.5
    union = (pred | true).sum()
    return float((pred & true).sum() / union) if union else 1.0
