"""Desk-scale lab for deep feature forgetting: one-point contraction, baselines, attacks, bounds."""

__version__ = "0.1.0"
