"""Self-supervised OOD detection via inter-document intra-label ranking."""

__version__ = "0.1.0"
