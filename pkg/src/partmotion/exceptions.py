"""Error types shared across training stages."""


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; the diagnostic message says where."""


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""
