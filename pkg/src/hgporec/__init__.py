"""Graph-contrastive recommender whose negatives and temperatures are chosen by a group-relative policy."""

__version__ = "0.1.0"
