"""Error types shared across the toolkit, mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid experiment configuration or dataset layout (exit code 1)."""


class DataError(RuntimeError):
    """Unreadable or malformed input data (exit code 2)."""
