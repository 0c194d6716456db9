"""Compile SQL adventure games whose answers are checked by salted query fingerprints."""

__version__ = "0.1.0"
