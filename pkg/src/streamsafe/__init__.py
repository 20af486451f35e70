"""Memory-safety verification of single-pass heap programs over forest data-structures."""

__version__ = "0.1.0"
