"""Intention-aware list re-ranking with review co-attention and dynamic transformer encoders."""

__version__ = "0.1.0"
