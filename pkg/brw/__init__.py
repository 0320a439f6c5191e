"""Numerics and simulation for killed branching random walks."""
