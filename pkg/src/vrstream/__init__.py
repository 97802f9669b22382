"""Multi-user tile-based 360 video streaming over a shared mmWave link."""

__version__ = "0.1.0"
