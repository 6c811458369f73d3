"""Seeded simulator of energy-harvesting federated learning with cyclic, battery-aware scheduling."""

__version__ = "0.1.0"
