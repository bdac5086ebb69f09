"""Causal volumetric tokenizer engine.

Compresses 3D scan volumes into discrete token grids via a Haar subband
front-end, a causal convolutional encoder-decoder, and lookup-free sign
quantization, with a staged training curriculum and tiled inference for long
volumes.
"""

from .backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
