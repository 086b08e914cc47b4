"""Federated RNN-autoencoder threat detection with secure aggregation, at desk scale."""

__version__ = "0.1.0"
