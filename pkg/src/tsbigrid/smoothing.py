"""Smooth replacements for sign, magnitude and clipping primitives.

Every nonlinearity in the steady-state equations must be twice continuously
differentiable so that Newton iterations see consistent analytic derivatives.
The standard trick is |x| ~ sqrt(x^2 + eps) with eps > 0, which bounds the
approximation error by sqrt(eps) and keeps every derivative finite.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "smooth_abs",
    "smooth_abs_d",
    "smooth_sgn",
    "smooth_sgn_d",
    "smooth_mag",
    "smooth_ramp",
    "smooth_ramp_d",
    "smooth_max0",
    "smooth_max0_d",
]


def smooth_abs(x, eps):
    """sqrt(x^2 + eps); always >= |x| and <= |x| + sqrt(eps)."""
    return np.sqrt(x * x + eps)


def smooth_abs_d(x, eps):
    """d/dx sqrt(x^2 + eps) = x / sqrt(x^2 + eps)."""
    return x / np.sqrt(x * x + eps)


def smooth_sgn(x, eps):
    """x / sqrt(x^2 + eps); odd, bounded by (-1, 1), slope eps^-1/2 at 0."""
    return x / np.sqrt(x * x + eps)


def smooth_sgn_d(x, eps):
    """d/dx of smooth_sgn: eps / (x^2 + eps)^(3/2)."""
    return eps / (x * x + eps) ** 1.5


def smooth_mag(re, im, eps):
    """Regularized phasor magnitude sqrt(re^2 + im^2 + eps)."""
    return np.sqrt(re * re + im * im + eps)


def smooth_ramp(x, eps):
    """(x + |x|_eps) / 2: smooth max(x, 0), off by <= sqrt(eps)/2."""
    return 0.5 * (x + np.sqrt(x * x + eps))


def smooth_ramp_d(x, eps):
    """Derivative of smooth_ramp: (1 + x/|x|_eps) / 2, a smooth unit step."""
    return 0.5 * (1.0 + x / np.sqrt(x * x + eps))


# Aliases used where the intent is "positive part" rather than "ramp segment".
smooth_max0 = smooth_ramp
smooth_max0_d = smooth_ramp_d
