"""Unsupervised cross-modal clustering: camera-balanced k-reciprocal re-ranking,
scheduled DBSCAN pseudo-labelling and memory-based contrastive training."""

__version__ = "0.1.0"
