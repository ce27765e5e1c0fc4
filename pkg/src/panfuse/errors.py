"""Exception hierarchy shared by every engine module.

Each error carries a stable ``category`` string that the service layer maps
to HTTP responses and the CLI maps to exit codes (config/usage -> 2,
everything data-related -> 3).
"""


class EngineError(Exception):
    """Base class for all engine failures."""

    category = "engine"


class FormatError(EngineError):
    """A file is not in the expected container format (magic, header, mode)."""

    category = "format"


class CorruptionError(EngineError):
    """A file's declared sizes disagree with its actual payload."""

    category = "corruption"


class ValidationError(EngineError):
    """A value violates a domain invariant (range, shape, scheme)."""

    category = "validation"


class ConsistencyError(EngineError):
    """Two files that must agree (ids vs. sidecar) do not."""

    category = "consistency"


class UnknownSchemeError(EngineError):
    """Lookup of a scheme id that is not registered."""

    category = "scheme"


class UsageError(EngineError):
    """An operation was invoked with unusable arguments (empty input, orphans)."""

    category = "usage"


class ConfigError(EngineError):
    """A pipeline configuration is invalid or missing required inputs."""

    category = "config"


class ImageRejected(EngineError):
    """A remap rejected the image because it contains a dropped source class."""

    category = "rejected"


EXIT_CODE_BY_CATEGORY = {
    "usage": 2,
    "config": 2,
    "format": 3,
    "corruption": 3,
    "validation": 3,
    "consistency": 3,
    "scheme": 3,
    "rejected": 3,
    "engine": 3,
}
