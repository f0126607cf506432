"""Generative and discriminative LSTM text classifiers with count-based baselines."""

__version__ = "0.1.0"
