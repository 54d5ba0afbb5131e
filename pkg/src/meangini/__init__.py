"""Mean-Gini-deviation policy gradients, variance-based baselines and an exact oracle."""

__version__ = "0.1.0"
