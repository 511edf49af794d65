"""Continual perceptual-score regression engine.

Trains a probabilistic regression head on precomputed per-frame feature
sequences with a combined correlation + precision loss, and keeps it
accurate across non-stationary sessions through compressed memory replay
(key-frame selection plus a learned feature adapter).
"""

__version__ = "0.1.0"
