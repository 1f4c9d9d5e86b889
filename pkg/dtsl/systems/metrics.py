"""Segmentation metrics: DSC, Jaccard, 95HD, ASD"""
import math
import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure
from typing import Dict, List, Optional

from config import METRIC_NAMES

FOUR_CONNECTED = generate_binary_structure(2, 1)


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch {list(pred.shape)} vs {list(gt.shape)}")
    return pred, gt


def dsc(pred, gt) -> float:
    """100 * 2|A∩B| / (|A|+|B|); both empty -> 100"""
    pred, gt = _pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 100.0
    return 100.0 * 2.0 * int(np.logical_and(pred, gt).sum()) / total


def jaccard(pred, gt) -> float:
    """100 * |A∩B| / |A∪B|; both empty -> 100"""
    pred, gt = _pair(pred, gt)
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 100.0
    return 100.0 * int(np.logical_and(pred, gt).sum()) / union


def boundary(mask) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask (image border counts as outside)"""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    interior = binary_erosion(mask, structure=FOUR_CONNECTED, border_value=0)
    return mask & ~interior


def surface_distances(pred, gt) -> Optional[np.ndarray]:
    """Pooled nearest boundary distances in both directions; None if a mask is empty"""
    pred, gt = _pair(pred, gt)
    if not pred.any() or not gt.any():
        return None
    edge_pred = boundary(pred)
    edge_gt = boundary(gt)
    to_gt = distance_transform_edt(~edge_gt)
    to_pred = distance_transform_edt(~edge_pred)
    return np.concatenate([to_gt[edge_pred], to_pred[edge_gt]])


def percentile_index(n: int, q: float = 0.95) -> int:
    """Index into the ascending list: ceil(q * n) - 1"""
    return max(int(math.ceil(q * n)) - 1, 0)


def hd95(pred, gt) -> Optional[float]:
    distances = surface_distances(pred, gt)
    if distances is None:
        return None
    ordered = np.sort(distances)
    return float(ordered[percentile_index(len(ordered))])


def asd(pred, gt) -> Optional[float]:
    distances = surface_distances(pred, gt)
    if distances is None:
        return None
    return float(distances.mean())


def binary_metrics(pred, gt) -> Dict[str, Optional[float]]:
    return {"dsc": dsc(pred, gt), "jaccard": jaccard(pred, gt), "hd95": hd95(pred, gt), "asd": asd(pred, gt)}


def _mean_defined(values: List[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


class MetricReport:
    """Per-class metrics averaged over cases, plus the foreground mean"""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.cases: Dict[int, Dict[str, List[Optional[float]]]] = {
            k: {name: [] for name in METRIC_NAMES} for k in range(num_classes)
        }

    def add_case(self, pred_labels: np.ndarray, gt_labels: np.ndarray):
        pred_labels = np.asarray(pred_labels)
        gt_labels = np.asarray(gt_labels)
        for k in range(self.num_classes):
            values = binary_metrics(pred_labels == k, gt_labels == k)
            for name in METRIC_NAMES:
                self.cases[k][name].append(values[name])

    @property
    def case_count(self) -> int:
        return len(self.cases[0]["dsc"])

    def class_value(self, k: int, name: str) -> Optional[float]:
        return _mean_defined(self.cases[k][name])

    def per_class(self) -> Dict[int, Dict[str, Optional[float]]]:
        return {k: {name: self.class_value(k, name) for name in METRIC_NAMES} for k in range(self.num_classes)}

    def foreground_mean(self) -> Dict[str, Optional[float]]:
        """Mean over classes 1..K-1 of the per-class values"""
        return {
            name: _mean_defined([self.class_value(k, name) for k in range(1, self.num_classes)])
            for name in METRIC_NAMES
        }

    def headline(self) -> Dict[str, Optional[float]]:
        return self.foreground_mean()


def evaluate_labels(pred_labels: np.ndarray, gt_labels: np.ndarray, num_classes: int) -> MetricReport:
    """Report over a batch [N,H,W] of predictions vs. ground truth, one case per image"""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError(f"label shape mismatch {list(pred_labels.shape)} vs {list(gt_labels.shape)}")
    report = MetricReport(num_classes)
    for pred, gt in zip(pred_labels, gt_labels):
        report.add_case(pred, gt)
    return report
