"""Adversarially trained energy discriminators that refine structured predictions."""

__version__ = "0.1.0"
