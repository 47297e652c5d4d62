"""fedlens: federated analytics queries and FA-assisted client selection."""

__version__ = "0.1.0"
