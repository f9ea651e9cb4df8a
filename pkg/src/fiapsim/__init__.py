"""Replica-mean-field and Poisson-Hypothesis simulation of fragmentation-interaction-aggregation processes."""

__version__ = "0.1.0"
