"""Decentralized information filtering with hybrid CI / Metropolis-Hastings consensus."""

__version__ = "0.1.0"
