"""Disparity map carrier: per-pixel horizontal offsets plus a validity mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class DisparityMap:
    """H x W real disparities with a boolean validity mask of the same shape."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ConfigError(
                f"values/valid must be matching 2-D arrays, got "
                f"{self.values.shape} and {self.valid.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def clamped(self, d_max: float) -> "DisparityMap":
        """Mark non-finite, negative, or >= d_max pixels invalid; values untouched."""
        ok = self.valid & np.isfinite(self.values) & (self.values >= 0) & (self.values < d_max)
        return DisparityMap(self.values.copy(), ok)

    @classmethod
    def dense(cls, values: np.ndarray) -> "DisparityMap":
        return cls(np.asarray(values), np.ones(np.asarray(values).shape, dtype=bool))
