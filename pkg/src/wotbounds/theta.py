"""Scalar cost profiles θ sampled piecewise-linearly on a grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measures import convex_envelope

SLOPE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function given by knots and values.

    Outside ``[knots[0], knots[-1]]`` the first/last segment is extended
    linearly, so ``(·)^+`` sampled on ``{-1, 0, 1}`` is exact everywhere.
    """

    knots: np.ndarray
    values: np.ndarray
    name: str = "theta"

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if k.size < 2 or k.size != v.size:
            raise ValueError("need at least two knots with matching values")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("theta samples must be finite")
        k.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @classmethod
    def positive_part(cls) -> "PiecewiseLinear":
        return cls([-1.0, 0.0, 1.0], [0.0, 0.0, 1.0], "positive_part")

    @classmethod
    def absolute_value(cls) -> "PiecewiseLinear":
        return cls([-1.0, 0.0, 1.0], [1.0, 0.0, 1.0], "abs")

    @classmethod
    def w_shape(cls) -> "PiecewiseLinear":
        # min(|z-1|, |z+1|)
        return cls([-2.0, -1.0, 0.0, 1.0, 2.0], [1.0, 0.0, 1.0, 0.0, 1.0], "w_shape")

    @classmethod
    def sampled(cls, f, grid: Sequence[float], name: str = "theta") -> "PiecewiseLinear":
        g = np.asarray(grid, dtype=float)
        return cls(g, np.asarray(f(g), dtype=float), name)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        k, v, s = self.knots, self.values, self.slopes
        out = np.interp(z, k, v)
        out = np.where(z < k[0], v[0] + s[0] * (z - k[0]), out)
        out = np.where(z > k[-1], v[-1] + s[-1] * (z - k[-1]), out)
        return out if out.ndim else float(out)

    def left_derivative(self, z):
        """``∂_-θ(z)``: slope of the segment immediately left of ``z``."""
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self.knots, z, side="left") - 1
        idx = np.clip(idx, 0, self.slopes.size - 1)
        out = self.slopes[idx]
        return out if out.ndim else float(out)

    def is_convex(self, tol: float = SLOPE_TOL) -> bool:
        return bool(np.all(np.diff(self.slopes) >= -tol))

    def is_concave(self, tol: float = SLOPE_TOL) -> bool:
        return bool(np.all(np.diff(self.slopes) <= tol))

    def envelope(self) -> "PiecewiseLinear":
        """Convex envelope on the knot range (exact for the linear extension
        only when the end slopes are already the extreme ones)."""
        env = convex_envelope(self.knots, self.values)
        return PiecewiseLinear(self.knots, env.hull_values, f"{self.name}**")

    def negated(self) -> "PiecewiseLinear":
        return PiecewiseLinear(self.knots, -self.values, f"-{self.name}")

    def kinks(self, tol: float = SLOPE_TOL) -> np.ndarray:
        d = np.abs(np.diff(self.slopes))
        return self.knots[1:-1][d > tol]

    def to_dict(self) -> dict:
        return {"theta_grid": self.knots.tolist(), "theta_values": self.values.tolist(), "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseLinear":
        return cls(d["theta_grid"], d["theta_values"], d.get("name", "theta"))
