"""Surrogate-assisted multi-objective evolution steered by a learned meta-policy.

A Dueling-DQN agent reads a bi-space landscape representation (true archive
plus surrogate-scored candidates) and, at each step, either regenerates
candidates or picks one of five infill criteria for the next true evaluation.
"""

__version__ = "0.1.0"
