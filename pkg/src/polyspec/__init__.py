"""Desk-scale laboratory for multi-model (polybasic) speculative decoding."""

__version__ = "0.1.0"
