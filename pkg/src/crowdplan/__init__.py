"""Crowd navigation via spatial-temporal trajectory optimization with
reinforcement-learned cost-weight adjustment."""

__version__ = "0.1.0"
