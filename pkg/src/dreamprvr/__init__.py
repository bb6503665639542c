"""Partially relevant video retrieval with diffusion-generated register tokens, on a numpy autodiff core."""

__version__ = "0.1.0"
