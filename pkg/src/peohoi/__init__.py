"""Prototype-embedding relation head for video human-object interaction detection."""

__version__ = "0.1.0"
