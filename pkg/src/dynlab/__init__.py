"""Simulation laboratory for the randomized 3-majority consensus dynamics."""
