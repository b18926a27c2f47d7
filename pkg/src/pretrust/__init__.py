"""Collateral-backed fast payments over a sharded guarantor network."""

__version__ = "0.1.0"
