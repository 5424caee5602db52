"""Item relatedness from co-occurrence: counting, confidence filtering,
SGNS embeddings, spectral diagnostics and higher-order relations."""

__version__ = "0.1.0"
