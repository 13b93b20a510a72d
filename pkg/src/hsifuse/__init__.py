"""Hyperspectral image classification by attention-gated fusion of a 3-D Swin
branch and a spatial-spectral transformer branch."""

__version__ = "0.1.0"
