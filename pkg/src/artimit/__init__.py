"""Acoustic-to-articulatory imitation toolkit."""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
