"""Explain a trained policy by imitating it with AIRL and analyzing the learned rewards."""

__version__ = "0.1.0"
