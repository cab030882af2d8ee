"""Least-squares slope fits used by the decay-measurement harnesses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SlopeFit", "fit_slope"]


@dataclass
class SlopeFit:
    """Fitted line through (abscissa, ordinate) with residual bookkeeping."""

    abscissa: tuple
    ordinate: tuple
    slope: float
    intercept: float
    residual: float

    def predict(self, x):
        return self.slope * np.asarray(x) + self.intercept


def fit_slope(xs, ys, min_points: int = 3) -> SlopeFit:
    """Fit ys ~ slope*xs + b; caller transforms to log scale beforehand."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size != ys.size:
        raise ValueError("abscissa/ordinate length mismatch")
    if xs.size < min_points:
        raise ValueError(f"need at least {min_points} points for a slope fit, got {xs.size}")
    A = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = float(np.sqrt(np.mean((ys - slope * xs - intercept) ** 2)))
    return SlopeFit(tuple(xs), tuple(ys), slope, intercept, resid)
