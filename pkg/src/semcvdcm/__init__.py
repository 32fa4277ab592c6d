"""Semantic embedding-enriched discrete choice models."""

__all__ = ["__version__"]
__version__ = "0.1.0"
