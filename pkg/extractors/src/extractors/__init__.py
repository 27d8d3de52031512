"""Feature-extraction scripts producing the embedding-store format."""

__version__ = "0.1.0"
