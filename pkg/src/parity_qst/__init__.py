"""Parity-assisted quantum state transfer through an ultrastrongly coupled Rabi mediator."""

__version__ = "0.1.0"
