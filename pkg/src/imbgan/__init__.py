"""Adversarial oversampling framework for imbalanced image classification."""

__version__ = "0.1.0"
