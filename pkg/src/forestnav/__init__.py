"""Monocular flight stack with a synthetic forest simulator."""

__version__ = "0.1.0"
