"""Federated, risk-aware fake task detection for mobile crowdsensing."""

__version__ = "0.1.0"
