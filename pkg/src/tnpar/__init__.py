"""Granger causal discovery from topological event sequences with a neural
Poisson auto-regressive model and amortized variational inference."""

__version__ = "0.1.0"
