"""Bohmian trajectories guided by a wave function that undergoes GRW-type
collapses centered on the actual particle positions."""

__version__ = "0.1.0"
