"""Gradient computation and the three-phase training protocol."""
