"""Coarse-to-fine context assembling and cross-frame attention for video segmentation."""
__version__ = "0.1.0"
