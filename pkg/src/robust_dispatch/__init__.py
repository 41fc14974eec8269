"""Data-driven robust fleet rebalancing: demand sets, reformulations, solvers."""

__version__ = "0.1.0"
