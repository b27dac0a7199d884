"""Weakly-supervised morphological tagging from tags projected across bitext."""

__version__ = "0.1.0"
