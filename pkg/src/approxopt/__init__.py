"""Unfolded optimizers with approximated iterations and learned hyperparameters."""

__version__ = "0.1.0"
