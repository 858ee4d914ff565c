"""Exception types shared across the pipeline."""


class MatgraphError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MatgraphError):
    """Malformed assembly JSON. Carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class SchemaError(MatgraphError):
    """Structurally invalid data: dangling references, width mismatches."""


class ConfigError(MatgraphError):
    """Invalid configuration value or unknown option."""


class ManifestError(MatgraphError):
    """Split manifest inconsistent with the corpus it describes."""


class MetricError(MatgraphError):
    """Metric requested on inputs it is not defined for."""


class ShapeError(MatgraphError):
    """Tensor shapes incompatible with the requested primitive."""
