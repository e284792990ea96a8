"""volroute: walk-forward volatility forecasting with risk-sensitive
specialist routing across calm and stressed market states."""

__version__ = "0.1.0"
