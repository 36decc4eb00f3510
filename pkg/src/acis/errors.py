"""Exception types raised across the toolkit."""


class AcisError(Exception):
    """Base class for all toolkit errors."""


class SeriesError(AcisError):
    """An image series could not be opened or is inconsistent."""


class DimensionMismatchError(SeriesError):
    def __init__(self, frame_index: int, expected, got, source: str = ""):
        self.frame_index = frame_index
        self.expected = tuple(expected)
        self.got = tuple(got)
        where = f" in {source}" if source else ""
        super().__init__(
            f"frame {frame_index}{where} has size {self.got}, expected {self.expected}"
        )


class UnsupportedBitDepthError(SeriesError):
    def __init__(self, frame_index: int, mode: str, source: str = ""):
        self.frame_index = frame_index
        self.mode = mode
        where = f" in {source}" if source else ""
        super().__init__(
            f"frame {frame_index}{where} has unsupported pixel format {mode!r}; "
            "16-bit unsigned grayscale is required"
        )


class RegionFormatError(AcisError):
    """A regions file or region definition is malformed."""


class RegionBoundsError(AcisError):
    def __init__(self, region_index: int, coordinate, shape):
        self.region_index = region_index
        self.coordinate = tuple(coordinate)
        self.shape = tuple(shape)
        super().__init__(
            f"region {region_index} has coordinate {self.coordinate} outside "
            f"{self.shape[0]}x{self.shape[1]} bounds"
        )


class ConfigError(AcisError):
    """Invalid model, training, or project configuration."""


class SpatialDivisibilityError(AcisError):
    def __init__(self, height: int, width: int, divisor: int):
        self.height = height
        self.width = width
        self.divisor = divisor
        super().__init__(
            f"input size {height}x{width} is not divisible by {divisor} "
            f"(both sides must be multiples of {divisor})"
        )


class CheckpointError(AcisError):
    """A checkpoint file is missing, corrupt, or from an incompatible version."""


class SamplingError(AcisError):
    """No training window containing a neuron pixel can be sampled."""


class TrainingDivergedError(AcisError):
    def __init__(self, epoch: int, step: int, seed: int, loss_value: float):
        self.epoch = epoch
        self.step = step
        self.seed = seed
        self.loss_value = loss_value
        super().__init__(
            f"non-finite loss {loss_value} at epoch {epoch}, step {step} (seed {seed})"
        )
