"""Summary images: flatten the time axis of a series into a 2D statistic.

All reductions stream frame by frame with float64 accumulators, so a
series never has to be held in memory and the result is independent of
how frames are chunked. Sums of 16-bit values stay below 2^53 for any
realistic frame count, so the accumulators are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AcisError

STAT_KINDS = ("mean", "max", "min", "std")
SIMILARITY_KINDS = ("corr", "cosine")
SUMMARY_KINDS = STAT_KINDS + SIMILARITY_KINDS


@dataclass(frozen=True)
class SummaryImage:
    """H x W per-pixel statistic over the time axis, with provenance."""

    values: np.ndarray
    kind: str
    dataset: str = ""
    frame_count: int = 0


@dataclass(frozen=True)
class NormalizedImage:
    """Summary image standardized to zero mean and unit deviation."""

    values: np.ndarray
    source_kind: str = ""


def stat_summary(series, kind: str) -> SummaryImage:
    """Single-pass mean, max, min, or std (population) summary."""
    if kind not in STAT_KINDS:
        raise AcisError(f"unknown summary kind {kind!r}; expected one of {STAT_KINDS}")
    if kind == "std" and series.frame_count < 2:
        raise AcisError("std summary requires at least 2 frames")

    total = np.zeros((series.height, series.width), dtype=np.float64)
    total_sq = np.zeros_like(total) if kind == "std" else None
    running_max = None
    running_min = None
    count = 0
    for frame in series.iter_frames():
        frame = frame.astype(np.float64)
        count += 1
        if kind in ("mean", "std"):
            total += frame
        if kind == "std":
            total_sq += frame * frame
        if kind == "max":
            running_max = frame if running_max is None else np.maximum(running_max, frame)
        if kind == "min":
            running_min = frame if running_min is None else np.minimum(running_min, frame)

    if kind == "mean":
        values = total / count
    elif kind == "max":
        values = running_max
    elif kind == "min":
        values = running_min
    else:
        mean = total / count
        variance = total_sq / count - mean * mean
        values = np.sqrt(np.maximum(variance, 0.0))
    return SummaryImage(values=values, kind=kind,
                        dataset=series.name, frame_count=count)


def neighborhood_similarity_summary(series, metric: str, radius: int = 1) -> SummaryImage:
    """Mean correlation or cosine similarity of each pixel with its neighbors.

    For each pixel, every neighbor trace within the (2*radius+1)^2 window
    (itself excluded) contributes one Pearson correlation or cosine
    similarity; the output is the mean over available neighbors, so border
    pixels average over fewer pairs. Pairs where a trace has zero variance
    (correlation) or zero norm (cosine) contribute 0.
    """
    if metric not in ("correlation", "cosine"):
        raise AcisError(f"unknown similarity metric {metric!r}")
    if radius < 1:
        raise AcisError("radius must be >= 1")
    if series.frame_count < 2:
        raise AcisError("neighborhood similarity requires at least 2 frames")

    h, w = series.height, series.width
    # Half of the symmetric offset set; each pair (p, p+d) is accumulated
    # once and credited to both endpoints.
    offsets = [
        (dr, dc)
        for dr in range(-radius, radius + 1)
        for dc in range(-radius, radius + 1)
        if (dr, dc) > (0, 0)
    ]

    sx = np.zeros((h, w), dtype=np.float64)
    sxx = np.zeros((h, w), dtype=np.float64)
    sxy = {off: np.zeros((h, w), dtype=np.float64) for off in offsets}
    count = 0
    for frame in series.iter_frames():
        frame = frame.astype(np.float64)
        count += 1
        sx += frame
        sxx += frame * frame
        for (dr, dc) in offsets:
            a_rows = slice(max(0, -dr), min(h, h - dr))
            a_cols = slice(max(0, -dc), min(w, w - dc))
            b_rows = slice(max(0, dr), min(h, h + dr))
            b_cols = slice(max(0, dc), min(w, w + dc))
            sxy[(dr, dc)][a_rows, a_cols] += frame[a_rows, a_cols] * frame[b_rows, b_cols]

    t = float(count)
    acc = np.zeros((h, w), dtype=np.float64)
    n_pairs = np.zeros((h, w), dtype=np.float64)
    for (dr, dc) in offsets:
        a_rows = slice(max(0, -dr), min(h, h - dr))
        a_cols = slice(max(0, -dc), min(w, w - dc))
        b_rows = slice(max(0, dr), min(h, h + dr))
        b_cols = slice(max(0, dc), min(w, w + dc))
        xy = sxy[(dr, dc)][a_rows, a_cols]
        x1, x2 = sx[a_rows, a_cols], sxx[a_rows, a_cols]
        y1, y2 = sx[b_rows, b_cols], sxx[b_rows, b_cols]
        if metric == "correlation":
            num = t * xy - x1 * y1
            var_x = t * x2 - x1 * x1
            var_y = t * y2 - y1 * y1
            denom_sq = var_x * var_y
            defined = (var_x > 0) & (var_y > 0)
        else:
            num = xy
            denom_sq = x2 * y2
            defined = (x2 > 0) & (y2 > 0)
        sim = np.zeros_like(num)
        np.divide(num, np.sqrt(denom_sq, where=defined, out=np.ones_like(denom_sq)),
                  where=defined, out=sim)
        acc[a_rows, a_cols] += sim
        acc[b_rows, b_cols] += sim
        n_pairs[a_rows, a_cols] += 1
        n_pairs[b_rows, b_cols] += 1

    values = np.clip(acc / n_pairs, -1.0, 1.0)
    kind = "corr" if metric == "correlation" else "cosine"
    return SummaryImage(values=values, kind=kind,
                        dataset=series.name, frame_count=count)


def normalize(summary) -> NormalizedImage:
    """Standardize: subtract the mean and divide by the (population) std.

    A constant image normalizes to all zeros.
    """
    if isinstance(summary, SummaryImage):
        values, kind = summary.values, summary.kind
    else:
        values, kind = np.asarray(summary), ""
    values = values.astype(np.float64)
    std = float(values.std())
    if std == 0.0:
        return NormalizedImage(values=np.zeros_like(values), source_kind=kind)
    return NormalizedImage(values=(values - values.mean()) / std, source_kind=kind)


def save_summary(summary: SummaryImage, path) -> None:
    """Persist a summary as .npy plus a .json sidecar (kind, provenance)."""
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, summary.values)
    sidecar = {
        "kind": summary.kind,
        "dataset": summary.dataset,
        "frame_count": summary.frame_count,
    }
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)


def load_summary(path) -> SummaryImage:
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    values = np.load(path)
    sidecar_path = path.with_suffix(".json")
    kind, dataset, frame_count = "", "", 0
    if sidecar_path.exists():
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        kind = sidecar.get("kind", "")
        dataset = sidecar.get("dataset", "")
        frame_count = sidecar.get("frame_count", 0)
    return SummaryImage(values=values, kind=kind, dataset=dataset, frame_count=frame_count)
