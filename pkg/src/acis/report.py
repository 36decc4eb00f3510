"""Overlay images: summary as grayscale with region outlines drawn on top.

Ground truth is outlined in green and predictions in red; predictions are
drawn last and win where the two boundaries coincide. When no ground truth
is available (test data), only predictions are drawn.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

GT_COLOR = (0, 255, 0)
PRED_COLOR = (255, 0, 0)


def boundary_pixels(region, shape) -> set:
    """Pixels of the region with a 4-neighbor outside it (or at the image
    edge); this is the one-pixel-wide outline the overlay draws."""
    h, w = shape
    pixels = region.pixels
    edge = set()
    for (r, c) in pixels:
        if r in (0, h - 1) or c in (0, w - 1):
            edge.add((r, c))
            continue
        for (nr, nc) in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if (nr, nc) not in pixels:
                edge.add((r, c))
                break
    return edge


def _to_grayscale(values: np.ndarray) -> np.ndarray:
    """Robust 1-99.5 percentile scaling to uint8."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = np.percentile(values, (1.0, 99.5))
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    return (scaled * 255).astype(np.uint8)


def render_overlay(summary_values: np.ndarray, pred_regions: Sequence,
                   gt_regions: Sequence = None) -> np.ndarray:
    """H x W x 3 uint8 overlay of region outlines on the summary image."""
    gray = _to_grayscale(summary_values)
    rgb = np.stack([gray, gray, gray], axis=-1)
    shape = gray.shape
    if gt_regions is not None:
        for region in gt_regions:
            for (r, c) in boundary_pixels(region, shape):
                rgb[r, c] = GT_COLOR
    for region in pred_regions:
        for (r, c) in boundary_pixels(region, shape):
            rgb[r, c] = PRED_COLOR
    return rgb


def save_overlay(summary_values: np.ndarray, pred_regions: Sequence,
                 gt_regions: Sequence, path) -> None:
    rgb = render_overlay(summary_values, pred_regions, gt_regions)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(path)
