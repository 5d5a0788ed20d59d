"""Mask-guided two-stream person search at desk scale."""

__version__ = "0.1.0"
