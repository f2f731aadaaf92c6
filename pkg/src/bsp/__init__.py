"""Boundary-sensitive pretext pre-training on synthetic video, end to end."""

__version__ = "0.1.0"
