"""Full-image inference: dihedral test-time augmentation, thresholding,
and connected-component region extraction.

Prediction is a single forward pass over the whole (padded) image; there
is no tiling, so there are no tile seams to stitch or suppress.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import model as model_mod
from . import summary as summary_mod
from .io import NeuronRegion, load_series

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

# (rotation quarter-turns, mirror flag): the 8 symmetries of a square.
DIHEDRAL = tuple((k, flip) for flip in (False, True) for k in range(4))
# Shape-preserving subgroup used for non-square inputs.
FLIP_GROUP = ((0, False), (2, False), (0, True), (2, True))


def apply_dihedral(image: np.ndarray, k: int, flip: bool) -> np.ndarray:
    out = np.rot90(image, k)
    return np.fliplr(out) if flip else out


def invert_dihedral(image: np.ndarray, k: int, flip: bool) -> np.ndarray:
    out = np.fliplr(image) if flip else image
    return np.rot90(out, -k)


def pad_to_divisible(image: np.ndarray, divisor: int):
    """Zero-pad bottom/right so both sides are multiples of divisor."""
    h, w = image.shape
    ph = (-h) % divisor
    pw = (-w) % divisor
    if ph == 0 and pw == 0:
        return image, (h, w)
    return np.pad(image, ((0, ph), (0, pw))), (h, w)


def predict_full(net, image: np.ndarray) -> np.ndarray:
    """One inference pass over a whole normalized image.

    Pads to the network's divisibility requirement with zeros and crops
    back; returns the H x W neuron-channel probability map.
    """
    image = np.ascontiguousarray(image, dtype=np.float32)
    padded, (h, w) = pad_to_divisible(image, 2 ** net.config.depth)
    probs = model_mod.predict_probabilities(net, padded[None], mode="infer")[0]
    return probs[:h, :w, 1]


def predict_augmented(net, image: np.ndarray) -> np.ndarray:
    """Mean probability map over rotations and reflections of the input.

    Square inputs use all 8 dihedral transforms; non-square inputs fall
    back to the 4 shape-preserving flips, with a warning.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape
    transforms = DIHEDRAL
    if h != w:
        warnings.warn(
            "non-square input: averaging over the 4 flip transforms instead of all 8"
        )
        transforms = FLIP_GROUP
    acc = np.zeros((h, w), dtype=np.float64)
    for (k, flip) in transforms:
        pred = predict_full(net, apply_dihedral(image, k, flip))
        acc += invert_dihedral(pred, k, flip)
    return acc / len(transforms)


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Pixel = 1 iff probability strictly exceeds the threshold."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(prob_map) > threshold).astype(np.uint8)


def extract_regions(mask: np.ndarray, min_size: int = 9) -> list:
    """8-connected components of a binary mask as regions.

    Components with fewer than min_size pixels are discarded; regions are
    ordered by the (row, col) of their lexicographically smallest pixel.
    """
    if min_size < 0:
        raise ValueError("min_size must be >= 0")
    labeled, n = ndimage.label(np.asarray(mask) != 0, structure=EIGHT_CONNECTED)
    regions = []
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labeled == k)
        if rows.size < min_size:
            continue
        regions.append(NeuronRegion(frozenset(zip(rows.tolist(), cols.tolist()))))
    regions.sort(key=lambda r: min(r.pixels))
    return regions


@dataclass(frozen=True)
class PredictOptions:
    threshold: float = 0.5
    min_size: int = 9
    tta: bool = True


@dataclass(frozen=True)
class TimingBreakdown:
    summary_ms: float
    inference_ms: float
    extraction_ms: float
    frame_count: int

    @property
    def total_ms(self) -> float:
        return self.summary_ms + self.inference_ms + self.extraction_ms

    @property
    def frames_per_minute(self) -> float:
        return self.frame_count / (self.total_ms / 60000.0)

    def to_dict(self) -> dict:
        return {
            "summary_ms": self.summary_ms,
            "inference_ms": self.inference_ms,
            "extraction_ms": self.extraction_ms,
            "total_ms": self.total_ms,
            "frame_count": self.frame_count,
            "frames_per_minute": self.frames_per_minute,
        }


@dataclass(frozen=True)
class PredictionResult:
    probability_map: np.ndarray
    mask: np.ndarray
    regions: tuple
    timing: TimingBreakdown
    summary: summary_mod.SummaryImage = field(repr=False, default=None)


def segment_summary(net, normalized: np.ndarray, options: PredictOptions = PredictOptions()):
    """Probability map, mask, and regions for an already-normalized image."""
    predict = predict_augmented if options.tta else predict_full
    prob_map = predict(net, normalized)
    mask = binarize(prob_map, options.threshold)
    regions = extract_regions(mask, options.min_size)
    return prob_map, mask, regions


def segment_series(series_path, checkpoint_path,
                   options: PredictOptions = PredictOptions()) -> PredictionResult:
    """Raw TIFF series to regions: mean summary, normalize, predict, extract.

    Timing covers the full path from raw frames, and throughput is
    reported as input frames per minute.
    """
    net, _ = model_mod.load_checkpoint(checkpoint_path)
    series = load_series(series_path)

    t0 = time.perf_counter()
    mean_summary = summary_mod.stat_summary(series, "mean")
    normalized = summary_mod.normalize(mean_summary)
    t1 = time.perf_counter()
    predict = predict_augmented if options.tta else predict_full
    prob_map = predict(net, normalized.values)
    t2 = time.perf_counter()
    mask = binarize(prob_map, options.threshold)
    regions = extract_regions(mask, options.min_size)
    t3 = time.perf_counter()

    timing = TimingBreakdown(
        summary_ms=(t1 - t0) * 1000.0,
        inference_ms=(t2 - t1) * 1000.0,
        extraction_ms=(t3 - t2) * 1000.0,
        frame_count=series.frame_count,
    )
    return PredictionResult(
        probability_map=prob_map,
        mask=mask,
        regions=tuple(regions),
        timing=timing,
        summary=mean_summary,
    )
