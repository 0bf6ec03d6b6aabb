"""Metadata for sigmar."""

__version__ = "0.1.0"
