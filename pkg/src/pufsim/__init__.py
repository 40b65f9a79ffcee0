"""Federated learning simulator with pseudo-gradient unlearning (PUF)."""

__version__ = "0.1.0"
