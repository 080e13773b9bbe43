"""Unsupervised GNN beamforming for multi-user SWIPT downlinks."""

__version__ = "0.1.0"
