"""Sparse-visibility reconstruction with multimodal knowledge fusion."""
__version__ = "0.1.0"
