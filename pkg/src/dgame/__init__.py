"""Belief-space reach-avoid games: grid solver, policies and closed-loop evaluation."""

__version__ = "0.1.0"
