"""Discrete-event simulation of a source-to-chain video replication service."""
__version__ = "0.1.0"
