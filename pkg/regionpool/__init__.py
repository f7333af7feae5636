"""Regional pooling of block-maxima series under a common temporal scaling model."""

__version__ = "0.1.0"
