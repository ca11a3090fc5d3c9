"""Multi-agent group relative policy optimization on toy cooperative Dec-POMDPs."""

__version__ = "0.1.0"
