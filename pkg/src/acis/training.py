"""Window sampling, the training loop, and epoch-end validation.

Each dataset's normalized mean summary and merged binary mask are split by
rows: the top 75% trains, the bottom 25% validates. Training draws random
batches of image/mask windows, each guaranteed to contain at least one
neuron pixel and independently augmented by one of the 8 rotations and
flips. After every epoch the network predicts each full validation strip
and is scored with the region-matching metrics; weights are checkpointed
whenever the mean matching F1 strictly improves.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import losses, metrics
from . import model as model_mod
from . import prediction, summary as summary_mod
from .errors import ConfigError, SamplingError, TrainingDivergedError
from .io import NeuronRegion, merge_to_binary, rasterize_regions

TRAIN_FRACTION = 0.75
LOSS_NAMES = ("log", "mdc", "weighted_log")
REJECTION_LIMIT = 100


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    batch_size: int = 20
    window: int = 128
    epochs: int = 10
    steps_per_epoch: int = 100
    loss: str = "log"
    fn_weight: float = 1.0
    seed: int = 0
    # Validation-time prediction settings.
    threshold: float = 0.5
    min_size: int = 9
    max_dist: float = metrics.DEFAULT_MAX_DIST

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("epochs and steps_per_epoch must be >= 1")
        if self.loss not in LOSS_NAMES:
            raise ConfigError(f"loss must be one of {LOSS_NAMES}, got {self.loss!r}")
        if self.fn_weight < 1.0:
            raise ConfigError("fn_weight must be >= 1")
        if self.loss == "weighted_log" and not (1.0 <= self.fn_weight <= 10.0):
            raise ConfigError("fn_weight must lie in [1, 10] for weighted_log")

    def loss_fn(self):
        if self.loss == "mdc":
            return lambda p, t: losses.mdc_loss(p, t)
        weight = self.fn_weight if self.loss == "weighted_log" else 1.0
        return lambda p, t: losses.log_loss(p, t, fn_weight=weight)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitDataset:
    """One dataset's normalized summary and mask, split by rows for
    training (top rows) and validation (bottom rows)."""

    name: str
    image: np.ndarray          # H x W normalized summary
    mask: np.ndarray           # H x W merged binary mask
    split_row: int
    regions: tuple = ()        # full-image ground truth, for validation

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def train_image(self) -> np.ndarray:
        return self.image[: self.split_row]

    @property
    def train_mask(self) -> np.ndarray:
        return self.mask[: self.split_row]

    @property
    def val_image(self) -> np.ndarray:
        return self.image[self.split_row:]

    @property
    def val_mask(self) -> np.ndarray:
        return self.mask[self.split_row:]

    def val_regions(self) -> list:
        """Ground-truth regions clipped to the validation strip, in
        strip-local coordinates; regions entirely above the split vanish."""
        clipped = []
        for region in self.regions:
            pixels = frozenset(
                (r - self.split_row, c) for (r, c) in region.pixels if r >= self.split_row
            )
            if pixels:
                clipped.append(NeuronRegion(pixels))
        return clipped


def split_train_val(image, mask, regions=(), name: str = "",
                    window: int = None) -> SplitDataset:
    """Split by rows: training rows [0, floor(0.75 H)), validation below."""
    values = image.values if isinstance(image, summary_mod.NormalizedImage) else np.asarray(image)
    mask = np.asarray(mask)
    if values.shape != mask.shape:
        raise ConfigError(f"image {values.shape} and mask {mask.shape} shapes differ")
    split_row = int(np.floor(TRAIN_FRACTION * values.shape[0]))
    if window is not None and split_row < window:
        warnings.warn(
            f"dataset {name!r}: training portion has {split_row} rows, "
            f"shorter than the {window}-pixel window"
        )
    return SplitDataset(name=name, image=values, mask=mask,
                        split_row=split_row, regions=tuple(regions))


def prepare_splits(bundles: Sequence, window: int = None) -> list:
    """Mean summary -> normalize -> merged mask -> 75/25 split, per bundle."""
    splits = []
    for bundle in bundles:
        if bundle.regions is None:
            raise ConfigError(f"dataset {bundle.name!r} has no ground-truth regions")
        normalized = summary_mod.normalize(summary_mod.stat_summary(bundle.series, "mean"))
        labeled = rasterize_regions(bundle.regions, bundle.series.height, bundle.series.width)
        mask = merge_to_binary(labeled)
        splits.append(
            split_train_val(normalized, mask, regions=bundle.regions,
                            name=bundle.name, window=window)
        )
    return splits


@dataclass(frozen=True)
class SampleWindow:
    image: np.ndarray
    mask: np.ndarray
    dataset: str
    row0: int
    col0: int
    rotations: int
    flipped: bool


def _eligible_splits(splits, window):
    eligible = []
    for i, ds in enumerate(splits):
        if ds.split_row >= window and ds.width >= window and ds.train_mask.any():
            eligible.append(i)
    return eligible


def sample_batch(rng: np.random.Generator, splits: Sequence,
                 config: TrainConfig) -> list:
    """Draw batch_size augmented windows, each containing a neuron pixel.

    The dataset is chosen uniformly; the window is positioned uniformly in
    the training portion and re-drawn (up to 100 times) until its mask
    contains a neuron, then as a fallback centered on a random neuron
    pixel. Each window gets an independent random rotation/flip.
    """
    window = config.window
    eligible = _eligible_splits(splits, window)
    if not eligible:
        raise SamplingError(
            "no training portion can produce a window containing a neuron pixel"
        )
    batch = []
    for _ in range(config.batch_size):
        ds = splits[eligible[rng.integers(len(eligible))]]
        max_r0 = ds.split_row - window
        max_c0 = ds.width - window
        row0 = col0 = None
        for _attempt in range(REJECTION_LIMIT):
            r0 = int(rng.integers(max_r0 + 1))
            c0 = int(rng.integers(max_c0 + 1))
            if ds.mask[r0:r0 + window, c0:c0 + window].any():
                row0, col0 = r0, c0
                break
        if row0 is None:
            rows, cols = np.nonzero(ds.train_mask)
            pick = int(rng.integers(rows.size))
            row0 = int(np.clip(rows[pick] - window // 2, 0, max_r0))
            col0 = int(np.clip(cols[pick] - window // 2, 0, max_c0))
        img = ds.image[row0:row0 + window, col0:col0 + window]
        msk = ds.mask[row0:row0 + window, col0:col0 + window]
        k = int(rng.integers(4))
        flip = bool(rng.integers(2))
        img = prediction.apply_dihedral(img, k, flip)
        msk = prediction.apply_dihedral(msk, k, flip)
        batch.append(
            SampleWindow(
                image=np.ascontiguousarray(img, dtype=np.float32),
                mask=np.ascontiguousarray(msk, dtype=np.uint8),
                dataset=ds.name,
                row0=row0,
                col0=col0,
                rotations=k,
                flipped=flip,
            )
        )
    return batch


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_pixelwise_f1: float
    val_neurofinder_f1: float
    checkpoint_taken: bool


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def append(self, stats: EpochStats):
        self.epochs.append(stats)

    def to_rows(self) -> list:
        return [asdict(e) for e in self.epochs]

    def to_json(self) -> str:
        return json.dumps(self.to_rows(), indent=2)

    def to_csv(self) -> str:
        buf = _stdio.StringIO()
        fields = ["epoch", "train_loss", "val_pixelwise_f1",
                  "val_neurofinder_f1", "checkpoint_taken"]
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        for row in self.to_rows():
            writer.writerow(row)
        return buf.getvalue()


def validate(net, splits: Sequence, threshold: float = 0.5, min_size: int = 9,
             max_dist: float = metrics.DEFAULT_MAX_DIST):
    """Full-image prediction on every validation strip.

    Returns (mean matching F1, mean pixelwise F1) averaged per dataset.
    Strips are padded with zeros to the network's divisibility requirement
    and predictions cropped back; each strip is scored against the
    ground-truth regions falling inside it.
    """
    nf_scores = []
    pix_scores = []
    for ds in splits:
        prob = prediction.predict_full(net, ds.val_image)
        mask = prediction.binarize(prob, threshold)
        pred_regions = prediction.extract_regions(mask, min_size)
        report = metrics.evaluate_dataset(
            ds.val_regions(), pred_regions, shape=mask.shape, max_dist=max_dist
        )
        nf_scores.append(report.f1)
        pix_scores.append(metrics.pixelwise_f1(ds.val_mask, mask))
    return float(np.mean(nf_scores)), float(np.mean(pix_scores))


def train(net, bundles: Sequence, config: TrainConfig = TrainConfig(),
          checkpoint_path=None, splits: Sequence = None):
    """Run the training protocol; returns (best Checkpoint, TrainHistory).

    epochs x steps_per_epoch Adam updates on sampled batches, validation
    after each epoch, checkpoint kept whenever the mean matching F1
    strictly improves. Pass precomputed splits to skip summary computation.
    Aborts with TrainingDivergedError if the loss goes non-finite.
    """
    if config.window % net.config.divisor:
        raise ConfigError(
            f"window {config.window} must be divisible by 2^depth = {net.config.divisor}"
        )
    if splits is None:
        splits = prepare_splits(bundles, window=config.window)
    if not splits:
        raise ConfigError("no datasets to train on")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loss_fn = config.loss_fn()

    history = TrainHistory()
    best_f1 = -1.0
    best_checkpoint = None
    for epoch in range(config.epochs):
        net.train()
        epoch_losses = []
        for step in range(config.steps_per_epoch):
            batch = sample_batch(rng, splits, config)
            images = torch.from_numpy(np.stack([w.image for w in batch])).unsqueeze(1)
            targets = torch.from_numpy(np.stack([w.mask for w in batch])).float()
            optimizer.zero_grad()
            logits = net(images)
            probs = torch.softmax(logits, dim=1).permute(0, 2, 3, 1)
            loss = loss_fn(probs, targets)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, step, config.seed, float(loss))
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss))

        nf_f1, pix_f1 = validate(net, splits, threshold=config.threshold,
                                 min_size=config.min_size, max_dist=config.max_dist)
        improved = nf_f1 > best_f1
        if improved:
            best_f1 = nf_f1
            metadata = {
                "epoch": epoch,
                "val_neurofinder_f1": nf_f1,
                "val_pixelwise_f1": pix_f1,
                "train_config": config.to_dict(),
            }
            state = {k: v.detach().cpu().clone() for k, v in net.state_dict().items()}
            best_checkpoint = model_mod.Checkpoint(
                config=net.config, state=state, metadata=metadata
            )
            if checkpoint_path is not None:
                best_checkpoint.save(checkpoint_path)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(np.mean(epoch_losses)),
                val_pixelwise_f1=pix_f1,
                val_neurofinder_f1=nf_f1,
                checkpoint_taken=improved,
            )
        )
    return best_checkpoint, history
