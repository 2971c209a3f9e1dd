"""Speech recognition by prepending stacked audio embeddings to a
decoder-only language model."""

__version__ = "0.1.0"
