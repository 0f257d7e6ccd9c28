"""DSRNet - dual-stream single-image reflection separation."""

__version__ = "1.0.0"
