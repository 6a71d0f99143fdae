"""Multi-behavior causal recommendation: debiased scoring, adaptive aggregation,
bias-aware contrastive alignment, and full-ranking evaluation."""

__version__ = "0.1.0"
