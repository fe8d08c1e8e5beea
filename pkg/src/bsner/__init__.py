"""Span-based named entity recognition with boundary smoothing."""

__version__ = "0.1.0"
