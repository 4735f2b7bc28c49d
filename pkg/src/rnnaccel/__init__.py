"""Bit-accurate behavioural simulator and SDK for an edge RNN accelerator."""

__version__ = "0.1.0"
