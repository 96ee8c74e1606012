"""Exception hierarchy shared across the pipeline.

The CLI maps these onto its exit-code contract: config errors exit 2,
data errors exit 3, numeric failures exit 4.
"""


class PipelineError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PipelineError):
    """Invalid configuration: unknown keys, bad values, schema violations."""


class DataError(PipelineError):
    """Invalid or unreadable data artifacts."""


class ManifestError(DataError):
    """Sample or dataset manifest is internally inconsistent."""


class TruncatedPayloadError(DataError):
    """Raw payload byte length does not match the manifest shape."""


class UnknownVersionError(DataError):
    """File or checkpoint carries a version this code does not understand."""


class CheckpointMismatchError(DataError):
    """Checkpoint is incompatible with the requested configuration."""


class NumericError(PipelineError):
    """Non-finite loss or other numeric failure during training."""
