"""Exception types shared across the toolkit.

Every error exposes a short machine-readable category (its class name) so
the CLI can emit one-line ``ERROR <Category>: <msg>`` diagnostics.
"""


class KeymaskError(Exception):
    """Base class for all toolkit errors."""

    @property
    def category(self) -> str:
        return type(self).__name__


class NotFound(KeymaskError):
    """A required path does not exist."""


class EmptyVideo(KeymaskError):
    """A video source decoded to zero frames."""


class InconsistentFrames(KeymaskError):
    """Frames of one video disagree in resolution."""


class InvalidTarget(KeymaskError):
    """Preprocessing target side is too small."""


class DatasetTooSmall(KeymaskError):
    """No video is eligible for pair sampling."""


class ConfigMismatch(KeymaskError):
    """Configured and stored settings disagree."""


class InvalidTemperature(KeymaskError):
    """Softmax temperature must be positive."""


class InvalidVariance(KeymaskError):
    """Gaussian variance must be positive."""


class ShapeMismatch(KeymaskError):
    """Input shapes violate an operation's contract."""


class IncompatibleMode(KeymaskError):
    """Transfer mode and mask variant cannot be combined."""


class UnsupportedCheckpoint(KeymaskError):
    """Checkpoint file is corrupt, truncated or of an unknown version."""


class NonFiniteLoss(KeymaskError):
    """Training loss became NaN or infinite."""


class UndefinedMetric(KeymaskError):
    """Metric has no defined value on the given inputs."""


class UsageError(KeymaskError):
    """Bad command line or config file usage."""
