"""Batch pipeline from raw web-session logs to optimized UI design parameters."""

__version__ = "0.1.0"
