"""From-scratch CNN training engine for aerial landscape classification."""

__version__ = "0.1.0"
