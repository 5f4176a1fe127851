"""Batched Thompson sampling simulator with adaptive (iPASE) batch sizes."""

__version__ = "0.1.0"
