"""Exception taxonomy shared across the package."""


class SurfCdmError(Exception):
    """Base class for all package errors."""


class EmptyMaskError(SurfCdmError):
    """Mask has no foreground pixels where foreground is required."""


class NonStarShapedError(SurfCdmError):
    """Mask failed the ray-crossing star-shape validation."""


class InvalidConfigError(SurfCdmError):
    """A configuration object violates its invariants."""


class InvalidScheduleError(SurfCdmError):
    """Noise schedule parameters are out of range."""


class InvalidScaleError(SurfCdmError):
    """Noise scale sigma outside its valid range."""


class LengthMismatchError(SurfCdmError):
    """Surfaces of different column counts were combined."""


class ConfigMismatchError(SurfCdmError):
    """Polar rasters with different grid configs were combined."""


class ShapeMismatchError(SurfCdmError):
    """Array shapes incompatible with the operation."""


class NonFiniteActivationError(SurfCdmError):
    """Denoiser produced NaN/Inf activations."""


class NonFiniteLossError(SurfCdmError):
    """Training loss became NaN/Inf; carries batch diagnostics."""


class FormatError(SurfCdmError):
    """Checkpoint file is malformed, truncated or incompatible."""


class InvalidSpecError(SurfCdmError):
    """Shape/degradation spec violates its invariants."""


class InvalidSizeError(SurfCdmError):
    """Requested raster size is unusable."""


class CorruptSampleError(SurfCdmError):
    """Stored sample failed invariant validation; message names the invariant."""


class TooFewRunsError(SurfCdmError):
    """Uncertainty estimation needs at least two runs."""


class IndexOutOfRangeError(SurfCdmError):
    """Step index outside the schedule."""


class ConfigFileError(SurfCdmError):
    """Run-configuration file is malformed or contains unknown keys."""
