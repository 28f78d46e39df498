"""Segmentation of unaligned RGB-thermal pairs on a small numpy autograd core."""

__version__ = "0.1.0"
