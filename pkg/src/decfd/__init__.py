"""Topic-aware causal intervention for counterfactual detection."""
__version__ = "0.1.0"
