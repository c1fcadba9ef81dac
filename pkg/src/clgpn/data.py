"""Container for a circular-linear time series with missing values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circular import wrap_angle


@dataclass
class Observations:
    """Angles ``x`` (radians) and linear values ``y`` for ``t = 1..T``.

    NaN marks a missing coordinate. Array index ``i`` holds time ``t = i + 1``.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float, copy=True).reshape(-1)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        if x.shape != y.shape:
            raise ValueError("x and y must have the same length")
        if x.size == 0:
            raise ValueError("at least one time point is required")
        if np.any(np.isinf(x)) or np.any(np.isinf(y)):
            raise ValueError("observations must be finite or NaN")
        ok = ~np.isnan(x)
        x[ok] = wrap_angle(x[ok])
        self.x = x
        self.y = y

    @property
    def T(self):
        return self.x.size

    @property
    def x_missing(self):
        return np.isnan(self.x)

    @property
    def y_missing(self):
        return np.isnan(self.y)

    @property
    def mask(self):
        """Boolean ``(T, 2)`` array, True where a coordinate is missing."""
        return np.column_stack([self.x_missing, self.y_missing])

    def copy(self):
        return Observations(self.x.copy(), self.y.copy())
