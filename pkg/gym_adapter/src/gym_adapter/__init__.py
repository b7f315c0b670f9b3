"""Adapter process serving real vision tasks over the bridge wire protocol."""

__version__ = "0.1.0"
