"""endow: optimal sale of an endowed asset with consumption and hedging."""

__version__ = "0.1.0"
