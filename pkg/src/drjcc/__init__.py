"""Distributionally robust peer-to-peer energy community coordination."""

__version__ = "0.1.0"
