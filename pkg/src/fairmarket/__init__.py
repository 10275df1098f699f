"""Peer-to-peer electricity market simulator with fairness-shaped multi-agent PPO."""

__version__ = "0.1.0"
