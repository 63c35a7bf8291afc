"""Multimodal trajectory forecasting with sampled hypotheses, learned
ranking and iterative refinement."""

__version__ = "0.1.0"
