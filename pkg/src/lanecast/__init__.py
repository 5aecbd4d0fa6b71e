"""Lane-aware multi-modal vehicle trajectory prediction toolkit."""

__version__ = "0.1.0"
