"""Adversarial weak-form neural solver for scalar conservation laws on the sphere."""

__version__ = "0.1.0"
