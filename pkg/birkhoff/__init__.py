"""Streaming analysis and classification of non-convergent Birkhoff averages."""

__version__ = "1.0.0"
