"""Per-feature min-max scaling fitted on the training split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataValidationError
from .windows import WindowSet


@dataclass(frozen=True, eq=False)
class Scaler:
    """Maps each feature to [0, 1] over its training range.

    A feature that is constant in training maps to 0 and inverts to the
    constant. ``target_col`` names the feature the target shares stats with.
    """

    minimum: np.ndarray
    maximum: np.ndarray
    target_col: int

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - self.minimum) / safe, 0.0)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.span + self.minimum

    def transform_target(self, y):
        t = self.target_col
        span = self.span[t]
        return (np.asarray(y, float) - self.minimum[t]) / span if span > 0 else np.zeros_like(y, float)

    def invert_target(self, z):
        t = self.target_col
        return np.asarray(z, float) * self.span[t] + self.minimum[t]

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist(),
                "target_col": self.target_col}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(np.asarray(d["min"], float), np.asarray(d["max"], float), int(d["target_col"]))


def fit_scaler(train: WindowSet, target_col: int = -1) -> Scaler:
    """Fit on training windows only (inputs plus targets of the target feature)."""
    if len(train) == 0:
        raise DataValidationError("cannot fit a scaler on an empty training set")
    p = train.X.shape[2]
    t = target_col % p
    flat = train.X.reshape(-1, p)
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    lo[t] = min(lo[t], train.y.min())
    hi[t] = max(hi[t], train.y.max())
    return Scaler(lo.astype(float), hi.astype(float), t)


def apply_scaler(scaler: Scaler, windows: WindowSet) -> WindowSet:
    return WindowSet(scaler.transform(windows.X), scaler.transform_target(windows.y),
                     windows.slot_index)


def invert_scaler(scaler: Scaler, z) -> np.ndarray:
    """Normalised target values back to calls."""
    return scaler.invert_target(z)
