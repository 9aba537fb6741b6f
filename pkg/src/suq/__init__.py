"""suq: probabilistic embeddings on the unit sphere, uncertainty-aware
losses, and desk-scale evaluation protocols."""

__version__ = "0.1.0"
