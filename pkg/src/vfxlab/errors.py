"""Exception hierarchy.

Every error raised on purpose by this package derives from VfxError and
carries a short machine-readable ``category`` used by the CLI for exit
codes and structured error output.
"""


class VfxError(Exception):
    """Base class for all package errors."""

    category = "error"


class ShapeError(VfxError):
    """Array dimensions do not satisfy an operation's contract."""

    category = "shape"


class FormatError(VfxError):
    """Malformed serialized data (tensor files, configs, replies)."""

    category = "format"


class ConfigError(VfxError):
    """Invalid or unknown configuration values."""

    category = "config"


class DependencyError(VfxError):
    """A required earlier pipeline stage has not been run."""

    category = "dependency"


class GrammarError(VfxError):
    """Instruction text does not match the accepted grammar."""

    category = "grammar"


class PlannerError(VfxError):
    """Scene planning failed (transport, schema, or timeout)."""

    category = "planner"


class SegmentationError(VfxError):
    """Mask extraction could not resolve the requested phrase."""

    category = "segmentation"


class MetricError(VfxError):
    """A metric's preconditions are violated."""

    category = "metric"


class NumericsError(VfxError):
    """Non-finite values where finite numbers are required."""

    category = "numerics"


class TrainingDivergedError(VfxError):
    """Training loss became non-finite."""

    category = "training"
