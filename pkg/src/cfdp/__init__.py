"""Counterfactual fairness versus demographic parity: estimators, tests and experiments."""

__version__ = "0.1.0"
