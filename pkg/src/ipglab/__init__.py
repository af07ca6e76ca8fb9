"""Proactive recommendation lab: user simulator, EMA sequential recommender,
and iterative preference guidance policies."""

__version__ = "0.1.0"
