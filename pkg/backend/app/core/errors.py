"""
Exception hierarchy for the inspection pipeline
Each exception carries the exit code the CLI reports for it
"""


class InspectError(Exception):
    """Base class for every error raised by the pipeline."""

    exit_code: int = 1


class InvalidArgumentError(InspectError, ValueError):
    """An operation was called with arguments outside its preconditions."""

    exit_code = 2


class ConfigError(InspectError):
    """The pipeline configuration (file, environment or flags) is invalid."""

    exit_code = 2


class InspectIOError(InspectError, OSError):
    """A file could not be read or written."""

    exit_code = 3


class ModelLoadError(InspectIOError):
    """A model file is missing, malformed or of an unsupported version."""


class ContractViolationError(InspectError):
    """A provider or model does not honour its declared contract (e.g. dimension)."""

    exit_code = 4
