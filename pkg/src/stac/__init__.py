"""Stochastic Actor-Critic: a single distributional critic with pessimistic TD targets."""

__version__ = "0.1.0"
