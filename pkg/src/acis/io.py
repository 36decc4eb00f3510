"""Loading calcium-imaging series, region files, and mask rasterization.

Series are 16-bit grayscale TIFF stacks: either a directory of TIFF files
(frames ordered lexicographically by filename, then by page within each
file) or a single multi-page TIFF. Frames are streamed one at a time so a
multi-GB stack never has to fit in memory.

Regions use the competition JSON format: an array of objects, each with a
"coordinates" list of [row, column] integer pairs.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import (
    DimensionMismatchError,
    RegionBoundsError,
    RegionFormatError,
    SeriesError,
    UnsupportedBitDepthError,
)

# Pillow modes that decode to unsigned 16-bit grayscale.
_UINT16_MODES = {"I;16", "I;16B", "I;16L", "I;16N"}

# Label value marking pixels claimed by more than one region.
OVERLAP = -1


@dataclass(frozen=True)
class NeuronRegion:
    """One neuron as a set of (row, col) pixel coordinates."""

    pixels: frozenset

    def __post_init__(self):
        if not self.pixels:
            raise RegionFormatError("a region must contain at least one pixel")

    @classmethod
    def from_coords(cls, coords) -> "NeuronRegion":
        pixels = set()
        for coord in coords:
            try:
                r, c = coord
            except (TypeError, ValueError):
                raise RegionFormatError(f"coordinate {coord!r} is not a [row, col] pair")
            if isinstance(r, bool) or isinstance(c, bool):
                raise RegionFormatError(f"coordinate {coord!r} is not an integer pair")
            if not (float(r).is_integer() and float(c).is_integer()):
                raise RegionFormatError(f"coordinate {coord!r} is not an integer pair")
            pixels.add((int(r), int(c)))
        return cls(frozenset(pixels))

    def __len__(self) -> int:
        return len(self.pixels)

    def sorted_coords(self) -> list:
        return sorted(self.pixels)

    def to_array(self) -> np.ndarray:
        """Pixels as an (n, 2) int array in sorted (row, col) order."""
        return np.asarray(self.sorted_coords(), dtype=np.int64)


class ImageSeries:
    """Lazy handle to a T x H x W stack of 16-bit frames.

    Frame dimensions and pixel format are validated from file headers at
    construction; pixel data is only read when frames are iterated.
    """

    def __init__(self, frames: Sequence, height: int, width: int, name: str = ""):
        if not frames:
            raise SeriesError(f"series {name!r} contains no frames")
        self._frames = list(frames)  # (path, page) pairs
        self.height = int(height)
        self.width = int(width)
        self.name = name

    @property
    def frame_count(self) -> int:
        return len(self._frames)

    @property
    def shape(self):
        return (self.frame_count, self.height, self.width)

    def iter_frames(self) -> Iterator[np.ndarray]:
        """Yield every frame exactly once, in order, as float32 H x W arrays.

        16-bit integer values convert to float32 losslessly; no rescaling
        is applied.
        """
        current_path = None
        image = None
        try:
            for index, (path, page) in enumerate(self._frames):
                if path != current_path:
                    if image is not None:
                        image.close()
                    image = Image.open(path)
                    current_path = path
                image.seek(page)
                arr = np.asarray(image)
                if arr.dtype != np.uint16:
                    raise UnsupportedBitDepthError(index, str(arr.dtype), str(path))
                if arr.shape != (self.height, self.width):
                    raise DimensionMismatchError(
                        index, (self.height, self.width), arr.shape, str(path)
                    )
                yield arr.astype(np.float32)
        finally:
            if image is not None:
                image.close()

    def __repr__(self):
        return (
            f"ImageSeries(name={self.name!r}, frames={self.frame_count}, "
            f"size={self.height}x{self.width})"
        )


def _tiff_files(directory: Path) -> list:
    files = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in (".tif", ".tiff")
    )
    if not files:
        raise SeriesError(f"no TIFF files found in {directory}")
    return files


def load_series(path, name: str = "") -> ImageSeries:
    """Open a series from a directory of TIFFs or a single multi-page TIFF.

    Only headers are read here; raises if any frame's size or bit depth
    disagrees with the first frame, naming the offending frame index.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"series path does not exist: {path}")
    sources = _tiff_files(path) if path.is_dir() else [path]

    frames = []
    size = None  # (height, width)
    for source in sources:
        with Image.open(source) as image:
            n_pages = getattr(image, "n_frames", 1)
            for page in range(n_pages):
                image.seek(page)
                index = len(frames)
                if image.mode not in _UINT16_MODES:
                    raise UnsupportedBitDepthError(index, image.mode, str(source))
                got = (image.height, image.width)
                if size is None:
                    size = got
                elif got != size:
                    raise DimensionMismatchError(index, size, got, str(source))
                frames.append((source, page))
    return ImageSeries(frames, size[0], size[1], name=name or path.stem)


def load_regions(path) -> list:
    """Read a regions JSON file: [{"coordinates": [[r, c], ...]}, ...]."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise RegionFormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise RegionFormatError(f"{path}: expected a top-level JSON array")
    regions = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "coordinates" not in entry:
            raise RegionFormatError(f"{path}: entry {i} lacks a 'coordinates' field")
        try:
            regions.append(NeuronRegion.from_coords(entry["coordinates"]))
        except RegionFormatError as exc:
            raise RegionFormatError(f"{path}: entry {i}: {exc}") from exc
    return regions


def write_regions(regions: Sequence, path) -> None:
    """Write regions in the same JSON format load_regions reads.

    Coordinates are emitted in sorted (row, col) order so output is
    deterministic; written atomically (temp file + rename).
    """
    payload = [{"coordinates": [list(c) for c in r.sorted_coords()]} for r in regions]
    atomic_write_json(payload, path)


def regions_to_payload(regions: Sequence) -> list:
    """Regions as JSON-ready [{"coordinates": [[r, c], ...]}] data."""
    return [{"coordinates": [list(c) for c in r.sorted_coords()]} for r in regions]


def atomic_write_json(payload, path) -> None:
    path = Path(path)
    atomic_write_text(json.dumps(payload, indent=2), path)


def atomic_write_text(text: str, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rasterize_regions(regions: Sequence, height: int, width: int) -> np.ndarray:
    """Rasterize regions to an H x W labeled mask.

    Pixel (r, c) carries label k (1-based region index) if exactly one
    region claims it; pixels claimed by several regions carry OVERLAP (-1).
    """
    labeled = np.zeros((height, width), dtype=np.int32)
    for k, region in enumerate(regions, start=1):
        for (r, c) in region.pixels:
            if not (0 <= r < height and 0 <= c < width):
                raise RegionBoundsError(k - 1, (r, c), (height, width))
            if labeled[r, c] == 0:
                labeled[r, c] = k
            elif labeled[r, c] != k:
                labeled[r, c] = OVERLAP
    return labeled


def merge_to_binary(labeled: np.ndarray) -> np.ndarray:
    """Collapse a labeled mask to binary, separating distinct neurons.

    Overlap pixels become background, and any pixel whose 8-neighborhood
    contains a pixel of a different nonzero label becomes background, so
    distinct neurons stay distinct 8-connected components.
    """
    labeled = np.asarray(labeled)
    positive = labeled > 0
    remove = np.zeros_like(positive)
    h, w = labeled.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            center = _shift_slice(h, dr), _shift_slice(w, dc)
            neighbor = _shift_slice(h, -dr), _shift_slice(w, -dc)
            a = labeled[center]
            b = labeled[neighbor]
            conflict = (a > 0) & (b > 0) & (a != b)
            remove[center] |= conflict
    out = (positive & ~remove).astype(np.uint8)
    return out


def _shift_slice(n: int, d: int) -> slice:
    if d > 0:
        return slice(d, n)
    if d < 0:
        return slice(0, n + d)
    return slice(0, n)


@dataclass(frozen=True)
class DatasetBundle:
    """A named series with optional ground-truth regions and metadata tags."""

    name: str
    series: ImageSeries
    regions: tuple = None
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regions is not None:
            object.__setattr__(self, "regions", tuple(self.regions))
            h, w = self.series.height, self.series.width
            for i, region in enumerate(self.regions):
                for (r, c) in region.pixels:
                    if not (0 <= r < h and 0 <= c < w):
                        raise RegionBoundsError(i, (r, c), (h, w))


@dataclass(frozen=True)
class DatasetStatistics:
    name: str
    frame_count: int
    height: int
    width: int
    mean_pixel_value: float
    region_count: int = None
    neuron_pixel_fraction: float = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "frame_count": self.frame_count,
            "height": self.height,
            "width": self.width,
            "mean_pixel_value": self.mean_pixel_value,
            "region_count": self.region_count,
            "neuron_pixel_fraction": self.neuron_pixel_fraction,
        }


def dataset_statistics(bundle: DatasetBundle) -> DatasetStatistics:
    """Per-dataset mean pixel value and neuron-pixel fraction.

    The fraction is measured on the merged binary mask (overlap and
    cross-neuron adjacency removed), matching what training sees.
    """
    total = 0.0
    count = 0
    for frame in bundle.series.iter_frames():
        total += float(frame.sum(dtype=np.float64))
        count += frame.size
    mean_value = total / count
    region_count = None
    fraction = None
    if bundle.regions is not None:
        labeled = rasterize_regions(
            bundle.regions, bundle.series.height, bundle.series.width
        )
        binary = merge_to_binary(labeled)
        region_count = len(bundle.regions)
        fraction = float(binary.mean(dtype=np.float64))
    return DatasetStatistics(
        name=bundle.name,
        frame_count=bundle.series.frame_count,
        height=bundle.series.height,
        width=bundle.series.width,
        mean_pixel_value=mean_value,
        region_count=region_count,
        neuron_pixel_fraction=fraction,
    )


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    series_path: Path
    regions_path: Path = None
    role: str = "train"


def load_manifest(path, data_root=None) -> list:
    """Read a dataset manifest JSON file.

    Format: {"datasets": [{"name", "series", "regions"?, "role"?}, ...]}.
    Relative paths resolve against data_root if given, else against the
    manifest's directory.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "datasets" not in data:
        raise RegionFormatError(f"{path}: manifest must contain a 'datasets' list")
    base = Path(data_root) if data_root else path.parent
    entries = []
    for i, item in enumerate(data["datasets"]):
        if "name" not in item or "series" not in item:
            raise RegionFormatError(f"{path}: dataset {i} needs 'name' and 'series'")
        series_path = base / item["series"]
        regions_path = base / item["regions"] if item.get("regions") else None
        entries.append(
            ManifestEntry(
                name=item["name"],
                series_path=series_path,
                regions_path=regions_path,
                role=item.get("role", "train"),
            )
        )
    return entries


def load_bundle(entry: ManifestEntry) -> DatasetBundle:
    series = load_series(entry.series_path, name=entry.name)
    regions = load_regions(entry.regions_path) if entry.regions_path else None
    return DatasetBundle(name=entry.name, series=series, regions=regions)
