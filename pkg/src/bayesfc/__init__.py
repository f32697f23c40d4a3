"""Dynamic EEG functional connectivity by Bayesian structure learning, with a graph classifier."""

__version__ = "0.1.0"
