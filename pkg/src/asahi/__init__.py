"""Adaptive slicing, dual-pathway inference and evaluation for small-object detection."""

__version__ = "0.1.0"
