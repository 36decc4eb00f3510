"""Region-matching evaluation: greedy nearest-centroid matching without
replacement, precision/recall/F1, inclusion/exclusion, and pixelwise F1.

Matching procedure: ground-truth regions are visited in ascending index;
each claims the unclaimed predicted region with the smallest centroid
Euclidean distance (ties to the lower predicted index), and the pair is
accepted iff that distance is <= max_dist. A predicted region can be
claimed at most once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .io import NeuronRegion, rasterize_regions

DEFAULT_MAX_DIST = 5.0


def centroid(region: NeuronRegion):
    """Arithmetic mean of the region's pixel coordinates, (row, col)."""
    arr = region.to_array()
    mean = arr.mean(axis=0)
    return (float(mean[0]), float(mean[1]))


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple             # (gt index, pred index, centroid distance)
    unmatched_gt: tuple
    unmatched_pred: tuple

    @property
    def n_matched(self) -> int:
        return len(self.pairs)

    @property
    def n_gt(self) -> int:
        return len(self.pairs) + len(self.unmatched_gt)

    @property
    def n_pred(self) -> int:
        return len(self.pairs) + len(self.unmatched_pred)


def match_regions(gt: Sequence, pred: Sequence, max_dist: float = DEFAULT_MAX_DIST) -> MatchResult:
    if max_dist <= 0:
        raise ValueError("max_dist must be positive")
    gt_centers = [centroid(r) for r in gt]
    pred_centers = [centroid(r) for r in pred]
    available = list(range(len(pred)))
    pairs = []
    unmatched_gt = []
    for gi, (gr, gc) in enumerate(gt_centers):
        if not available:
            unmatched_gt.append(gi)
            continue
        best = min(available,
                   key=lambda pi: (math.hypot(gr - pred_centers[pi][0],
                                              gc - pred_centers[pi][1]), pi))
        dist = math.hypot(gr - pred_centers[best][0], gc - pred_centers[best][1])
        if dist <= max_dist:
            pairs.append((gi, best, dist))
            available.remove(best)
        else:
            unmatched_gt.append(gi)
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_gt=tuple(unmatched_gt),
        unmatched_pred=tuple(available),
    )


def precision_recall_f1(match: MatchResult):
    """(precision, recall, f1) with the competition's empty-set conventions:
    no ground truth -> recall 1, no predictions -> precision 1, and f1 = 0
    when precision and recall are both 0."""
    recall = match.n_matched / match.n_gt if match.n_gt else 1.0
    precision = match.n_matched / match.n_pred if match.n_pred else 1.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return precision, recall, f1


def inclusion_exclusion(match: MatchResult, gt: Sequence, pred: Sequence):
    """Structural similarity over matched pairs.

    inclusion = mean |gt ∩ pred| / |gt|, exclusion = mean |gt ∩ pred| / |pred|;
    (0, 0) when nothing matched.
    """
    if not match.pairs:
        return 0.0, 0.0
    inclusions = []
    exclusions = []
    for gi, pi, _ in match.pairs:
        overlap = len(gt[gi].pixels & pred[pi].pixels)
        inclusions.append(overlap / len(gt[gi]))
        exclusions.append(overlap / len(pred[pi]))
    return float(np.mean(inclusions)), float(np.mean(exclusions))


def pixelwise_f1(a: np.ndarray, b: np.ndarray) -> float:
    """F1 over pixels between two binary masks (2TP / (2TP + FP + FN)).

    Two all-background masks score 1.0 (no positives, no errors).
    """
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    tp = int((a & b).sum())
    denom = 2 * tp + int((a ^ b).sum())
    return 2 * tp / denom if denom else 1.0


@dataclass(frozen=True)
class EvalReport:
    f1: float
    precision: float
    recall: float
    inclusion: float
    exclusion: float
    pixelwise_f1: float
    n_gt: int
    n_pred: int
    n_matched: int

    def to_dict(self) -> dict:
        return {
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "inclusion": self.inclusion,
            "exclusion": self.exclusion,
            "pixelwise_f1": self.pixelwise_f1,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "n_matched": self.n_matched,
        }


def _union_mask(regions: Sequence, shape) -> np.ndarray:
    labeled = rasterize_regions(regions, shape[0], shape[1])
    return (labeled != 0).astype(np.uint8)


def evaluate_dataset(gt: Sequence, pred: Sequence, shape,
                     max_dist: float = DEFAULT_MAX_DIST) -> EvalReport:
    """Full report for one dataset's ground truth against its predictions."""
    match = match_regions(gt, pred, max_dist=max_dist)
    precision, recall, f1 = precision_recall_f1(match)
    inclusion, exclusion = inclusion_exclusion(match, gt, pred)
    pix = pixelwise_f1(_union_mask(gt, shape), _union_mask(pred, shape))
    return EvalReport(
        f1=f1,
        precision=precision,
        recall=recall,
        inclusion=inclusion,
        exclusion=exclusion,
        pixelwise_f1=pix,
        n_gt=len(gt),
        n_pred=len(pred),
        n_matched=match.n_matched,
    )
