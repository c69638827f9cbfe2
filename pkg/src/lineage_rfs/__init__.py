"""Labeled random-finite-set filters for cell tracking with lineage."""

__version__ = "0.1.0"
