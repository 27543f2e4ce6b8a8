"""Two-stage AF burden estimation from RR interval sequences."""

__version__ = "0.1.0"
