"""The segmentation network: a fully convolutional U-Net over summary images.

Encoder stages double the filter count (base_filters * 2^i), a bottleneck
sits below the deepest pool, and decoder stages mirror the encoder with
2x2-stride transpose convolutions and skip concatenation. Every conv is
zero-padded, so output spatial size equals input size for any H, W
divisible by 2^depth. The head is a 1x1 conv with two filters feeding a
per-pixel softmax over (background, neuron).

The default configuration has 7,765,442 trainable parameters; the exact
closed-form count is implemented by parameter_count_formula and documented
in the README.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ConfigError, SpatialDivisibilityError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    base_filters: int = 32
    depth: int = 4
    convs_per_block: int = 2
    kernel_size: int = 3
    # One rate per encoder stage plus the bottleneck, shallow to deep.
    dropout_rates: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    input_channels: int = 1
    output_classes: int = 2
    batch_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dropout_rates", tuple(self.dropout_rates))
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.base_filters < 1:
            raise ConfigError("base_filters must be >= 1")
        if self.convs_per_block < 1:
            raise ConfigError("convs_per_block must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd and >= 1")
        if len(self.dropout_rates) != self.depth + 1:
            raise ConfigError(
                f"dropout_rates needs depth+1={self.depth + 1} entries, "
                f"got {len(self.dropout_rates)}"
            )
        if any(not (0.0 <= r < 1.0) for r in self.dropout_rates):
            raise ConfigError("dropout rates must lie in [0, 1)")
        if self.input_channels < 1 or self.output_classes < 2:
            raise ConfigError("need input_channels >= 1 and output_classes >= 2")

    @property
    def divisor(self) -> int:
        return 2 ** self.depth

    def stage_filters(self) -> list:
        """Filter counts for encoder stages 0..depth-1 plus the bottleneck."""
        return [self.base_filters * 2 ** i for i in range(self.depth + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropout_rates"] = list(d["dropout_rates"])
        return d

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class _ConvBlock(nn.Module):
    """convs_per_block x (conv -> BN -> ReLU), optionally ending in Dropout2d."""

    def __init__(self, in_ch, out_ch, config: ModelConfig, dropout: float = 0.0):
        super().__init__()
        pad = config.kernel_size // 2
        layers = []
        ch = in_ch
        for _ in range(config.convs_per_block):
            layers.append(nn.Conv2d(ch, out_ch, config.kernel_size, padding=pad))
            if config.batch_norm:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.ReLU(inplace=True))
            ch = out_ch
        if dropout > 0.0:
            layers.append(nn.Dropout2d(dropout))
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        return self.block(x)


class UNet2DS(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        filters = config.stage_filters()
        enc = filters[: config.depth]
        bottleneck = filters[config.depth]

        self.down = nn.ModuleList()
        ch = config.input_channels
        for i, f in enumerate(enc):
            self.down.append(_ConvBlock(ch, f, config, dropout=config.dropout_rates[i]))
            ch = f
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _ConvBlock(ch, bottleneck, config,
                                     dropout=config.dropout_rates[config.depth])

        self.up = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        ch = bottleneck
        for f in reversed(enc):
            self.up.append(nn.ConvTranspose2d(ch, f, kernel_size=2, stride=2))
            self.up_blocks.append(_ConvBlock(2 * f, f, config))
            ch = f
        self.head = nn.Conv2d(ch, config.output_classes, kernel_size=1)

    def forward(self, x):
        """B x C x H x W input to B x classes x H x W logits."""
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, block, skip in zip(self.up, self.up_blocks, reversed(skips)):
            x = up(x)
            x = block(torch.cat([x, skip], dim=1))
        return self.head(x)


def build(config: ModelConfig = None, seed: int = 0) -> UNet2DS:
    """Construct a network with deterministic, seed-controlled initialization.

    Initialization is the framework's fan-in-scaled uniform scheme, drawn
    from a generator seeded here, so the same seed yields identical weights.
    """
    config = config or ModelConfig()
    torch.manual_seed(seed)
    return UNet2DS(config)


def count_parameters(net: nn.Module) -> int:
    """Number of trainable scalars (conv weights/biases, BN scale/shift)."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def parameter_count_formula(config: ModelConfig = None) -> int:
    """Closed-form trainable parameter count for a configuration.

    conv(i->o, k):       k^2 * i * o + o
    transpose(i->o, 2):  4 * i * o + o
    batch norm(o):       2 * o
    summed over: encoder blocks, bottleneck, decoder transpose+blocks,
    and the 1x1 output head.
    """
    config = config or ModelConfig()
    k2 = config.kernel_size ** 2
    bn = 2 if config.batch_norm else 0

    def conv_block(in_ch, out_ch):
        total = 0
        ch = in_ch
        for _ in range(config.convs_per_block):
            total += k2 * ch * out_ch + out_ch + bn * out_ch
            ch = out_ch
        return total

    filters = config.stage_filters()
    enc = filters[: config.depth]
    bottleneck = filters[config.depth]

    total = 0
    ch = config.input_channels
    for f in enc:
        total += conv_block(ch, f)
        ch = f
    total += conv_block(ch, bottleneck)
    ch = bottleneck
    for f in reversed(enc):
        total += 4 * ch * f + f          # transpose conv
        total += conv_block(2 * f, f)    # after skip concatenation
        ch = f
    total += ch * config.output_classes + config.output_classes
    return total


def require_divisible(height: int, width: int, depth: int) -> None:
    divisor = 2 ** depth
    if height % divisor or width % divisor:
        raise SpatialDivisibilityError(height, width, divisor)


def predict_probabilities(net: UNet2DS, images, mode: str = "infer") -> np.ndarray:
    """Forward a batch of normalized images to per-pixel class probabilities.

    images: B x H x W array (numpy or tensor); returns B x H x W x 2 with
    channels (background, neuron) summing to 1 per pixel. In infer mode
    dropout is disabled and batch norm uses running statistics, so repeated
    calls are deterministic; train mode uses batch statistics and active
    dropout.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = torch.as_tensor(np.ascontiguousarray(images), dtype=torch.float32)
    if x.ndim != 3:
        raise ConfigError(f"expected B x H x W input, got shape {tuple(x.shape)}")
    require_divisible(x.shape[1], x.shape[2], net.config.depth)
    net.train(mode == "train")
    with torch.no_grad():
        logits = net(x.unsqueeze(1))
        probs = torch.softmax(logits, dim=1)
    return probs.permute(0, 2, 3, 1).numpy()


@dataclass(frozen=True)
class Checkpoint:
    """Serialized network parameters plus config and training metadata."""

    config: ModelConfig
    state: dict
    metadata: dict = field(default_factory=dict)

    def to_network(self) -> UNet2DS:
        net = build(self.config, seed=0)
        net.load_state_dict(self.state)
        net.eval()
        return net

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "state": self.state,
            "metadata": dict(self.metadata),
        }
        torch.save(payload, path)


def save_checkpoint(net: UNet2DS, metadata: dict, path) -> None:
    state = {k: v.detach().cpu().clone() for k, v in net.state_dict().items()}
    Checkpoint(config=net.config, state=state, metadata=dict(metadata)).save(path)


def load_checkpoint(path):
    """Load a checkpoint; returns (network, metadata).

    Raises CheckpointError on missing file, unsupported format version, or
    a config hash that does not match the stored config.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    try:
        config = ModelConfig(**payload["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: invalid stored config: {exc}") from exc
    if config.hash() != payload.get("config_hash"):
        raise CheckpointError(f"{path}: config hash mismatch; file is corrupt or stale")
    checkpoint = Checkpoint(config=config, state=payload["state"],
                            metadata=payload.get("metadata", {}))
    return checkpoint.to_network(), checkpoint.metadata
