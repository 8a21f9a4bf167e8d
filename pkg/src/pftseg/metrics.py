"""Segmentation metrics: confusion matrices and mean IoU.

mIoU = mean over all K classes of TP / (TP + FP + FN). A class with an
empty union (never predicted, never present) contributes IoU 0 and stays
in the denominator; the convention is recorded in benchmark reports.
"""

import numpy as np

from .errors import ValidationError


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """K x K count matrix, rows = ground truth, columns = prediction."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValidationError(
                f"{name} contains values outside [0, {num_classes - 1}]"
            )
    idx = num_classes * gt.astype(np.int64).ravel() + pred.astype(np.int64).ravel()
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def per_class_iou(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - np.diag(cm)
    fn = cm.sum(axis=1) - np.diag(cm)
    union = tp + fp + fn
    iou = np.zeros(cm.shape[0])
    nz = union > 0
    iou[nz] = tp[nz] / union[nz]
    return iou


def miou(cm: np.ndarray) -> float:
    """Mean IoU over all classes (empty-union classes count as 0)."""
    return float(per_class_iou(cm).mean())
