"""Robust part-aware text-to-motion generation on partially credible data."""

__version__ = "0.1.0"

from .skeleton import build_default_skeleton, validate_partition  # noqa: F401
