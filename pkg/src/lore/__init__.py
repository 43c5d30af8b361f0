"""Tier-weighted contrastive fine-tuning of a query encoder for retrieval."""

__version__ = "0.1.0"
