"""Soft thresholding and the gate <-> threshold correspondence.

A gate g in [0, 1] applied multiplicatively, g * x, is the same operation as
soft thresholding x with the input-dependent threshold (1 - g) * |x|.
Both forms are exposed so the equivalence can be checked directly.
"""
from __future__ import annotations

import numpy as np

__all__ = ["soft", "soft_map", "gate_to_threshold", "gated"]


def soft(x: float, theta: float) -> float:
    """sign(x) * max(0, |x| - theta), with sign(0) = 0."""
    if theta < 0:
        raise ValueError(f"threshold must be non-negative, got {theta}")
    mag = abs(x) - theta
    if mag <= 0:
        return 0.0 * x
    return mag if x > 0 else -mag


def soft_map(x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    theta = np.asarray(theta)
    if x.shape != theta.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs threshold {theta.shape}")
    if np.any(theta < 0):
        raise ValueError("threshold map has negative entries")
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0)


def gate_to_threshold(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Threshold (1 - g) * |x| that makes soft thresholding equal to g * x."""
    g = np.asarray(g)
    x = np.asarray(x)
    if g.shape != x.shape:
        raise ValueError(f"shape mismatch: gate {g.shape} vs x {x.shape}")
    if np.any((g < 0) | (g > 1)):
        raise ValueError("gate values must lie in [0, 1]")
    return (1 - g) * np.abs(x)


def gated(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.asarray(g) * np.asarray(x)
