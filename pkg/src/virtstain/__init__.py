"""Multi-stain virtual staining toolkit."""

__version__ = "0.1.0"
