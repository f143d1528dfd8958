"""Recurrent transformer networks for old-film restoration and colorization."""

__version__ = "0.1.0"
