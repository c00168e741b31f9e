"""Post-processing toolkit for block-transform-coded frames.

A self-contained pipeline: a toy quadtree/DCT codec, partition-derived
guidance masks, a small deterministic CNN engine, partition-aware model
variants, an adaptive-switching model bank with per-patch selection flags,
and PSNR/BD-rate evaluation.
"""

__version__ = "0.1.0"
