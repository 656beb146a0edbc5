"""Phoneme-text cross-attention intent classification toolkit."""

__version__ = "0.1.0"
