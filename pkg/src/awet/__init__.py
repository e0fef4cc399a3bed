"""Advantage-weighted actor-critic learning from demonstrations with DTW early termination."""
