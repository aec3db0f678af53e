"""Network-based portfolio diversification toolkit."""

__version__ = "0.1.0"
