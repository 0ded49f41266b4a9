"""Finitely supported probability measures on the real line.

Provides the :class:`DiscreteMeasure` value type together with CDF/quantile
calculus, one-dimensional Wasserstein distances, a two-route convex-order
test and lower convex envelopes of sampled scalar functions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConvexOrderInconsistency, InvalidMeasureError

MERGE_TOL = 1e-12
SUM_TOL = 1e-12
LOAD_RENORMALIZE_TOL = 1e-9
CONVEX_ORDER_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure with finitely many atoms.

    ``support`` is strictly increasing and ``weights`` are strictly positive
    and sum to one (within ``1e-12``). Use :meth:`from_atoms` to build a
    measure from unsorted / duplicated / slightly unnormalized input.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = _frozen(self.support).reshape(-1)
        w = _frozen(self.weights).reshape(-1)
        if s.size == 0 or s.size != w.size:
            raise InvalidMeasureError(
                f"support and weights must be non-empty and of equal length ({s.size} vs {w.size})"
            )
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(w))):
            raise InvalidMeasureError("support and weights must be finite")
        if np.any(np.diff(s) <= 0):
            raise InvalidMeasureError("support must be strictly increasing")
        if np.any(w <= 0):
            raise InvalidMeasureError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise InvalidMeasureError(f"weights sum to {w.sum():.15g}, expected 1")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_atoms(
        cls,
        points: Iterable[float],
        weights: Iterable[float],
        *,
        merge_tol: float = MERGE_TOL,
        drop_below: float = 0.0,
        renormalize_tol: float = LOAD_RENORMALIZE_TOL,
    ) -> "DiscreteMeasure":
        """Sort, merge near-duplicate points, drop negligible weights, renormalize.

        Weights are rescaled only if their total is within ``renormalize_tol``
        of one; anything further off is rejected.
        """
        p = np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=float).reshape(-1)
        w = np.asarray(list(weights) if not isinstance(weights, np.ndarray) else weights, dtype=float).reshape(-1)
        if p.size != w.size or p.size == 0:
            raise InvalidMeasureError("points and weights must be non-empty and of equal length")
        if np.any(w < -max(drop_below, 1e-15)):
            raise InvalidMeasureError("negative weight")
        total = w.sum()
        if abs(total - 1.0) > renormalize_tol:
            raise InvalidMeasureError(f"weights sum to {total:.12g}; outside renormalization tolerance")
        order = np.argsort(p, kind="stable")
        p, w = p[order], w[order]
        pts, wts = [], []
        for x, m in zip(p, w):
            if pts and x - pts[-1] < merge_tol:
                wts[-1] += m
            else:
                pts.append(float(x))
                wts.append(float(m))
        pts_a = np.array(pts)
        wts_a = np.array(wts)
        keep = wts_a > drop_below
        if not np.any(keep):
            raise InvalidMeasureError("all weights vanish")
        pts_a, wts_a = pts_a[keep], wts_a[keep]
        wts_a = wts_a / wts_a.sum()
        return cls(pts_a, wts_a)

    @classmethod
    def dirac(cls, x: float) -> "DiscreteMeasure":
        return cls([float(x)], [1.0])

    @classmethod
    def uniform(cls, points: Sequence[float]) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        return cls.from_atoms(pts, np.full(pts.size, 1.0 / pts.size))

    # -- basic calculus ---------------------------------------------------

    def __len__(self) -> int:
        return int(self.support.size)

    def __iter__(self):
        return iter(zip(self.support.tolist(), self.weights.tolist()))

    def __repr__(self) -> str:
        atoms = ", ".join(f"{x:.6g}:{w:.6g}" for x, w in self)
        return f"DiscreteMeasure({{{atoms}}})"

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.support))

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, np.asarray(f(self.support), dtype=float)))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(self.support, x, side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return out if out.ndim else float(out)

    def cdf_left(self, x) -> np.ndarray:
        """``F(x-) = mu((-inf, x))``."""
        x = np.asarray(x, dtype=float)
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(self.support, x, side="left")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return out if out.ndim else float(out)

    def call(self, k) -> np.ndarray:
        """``E[(Y - k)^+]`` evaluated at each strike ``k``."""
        k = np.asarray(k, dtype=float)
        val = np.maximum(self.support[None, :] - k.reshape(-1, 1), 0.0) @ self.weights
        return val.reshape(k.shape) if k.ndim else float(val[0])

    def put(self, k) -> np.ndarray:
        """``E[(k - Y)^+]`` evaluated at each strike ``k``."""
        k = np.asarray(k, dtype=float)
        val = np.maximum(k.reshape(-1, 1) - self.support[None, :], 0.0) @ self.weights
        return val.reshape(k.shape) if k.ndim else float(val[0])

    def push_forward(self, f: Callable[[np.ndarray], np.ndarray]) -> "DiscreteMeasure":
        return DiscreteMeasure.from_atoms(np.asarray(f(self.support), dtype=float), self.weights)

    def cumulative(self) -> np.ndarray:
        """Cumulative weights with the last entry pinned to exactly 1."""
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        return cum

    def allclose(self, other: "DiscreteMeasure", tol: float = 1e-10) -> bool:
        """Weights agree within ``tol`` atom-by-atom on the union of supports."""
        return measure_distance_sup(self, other) <= tol

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteMeasure":
        if "support" not in d or "weights" not in d:
            raise InvalidMeasureError("measure JSON needs 'support' and 'weights'")
        return cls.from_atoms(d["support"], d["weights"], merge_tol=0.0)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["point", "weight"])
        for x, w in self:
            writer.writerow([repr(x), repr(w)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DiscreteMeasure":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        try:
            pts = [float(r[0]) for r in rows]
            wts = [float(r[1]) for r in rows]
        except (IndexError, ValueError) as exc:
            raise InvalidMeasureError(f"malformed measure CSV: {exc}") from exc
        return cls.from_atoms(pts, wts, merge_tol=0.0)

    @classmethod
    def load(cls, path) -> "DiscreteMeasure":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".csv":
            return cls.from_csv(text)
        return cls.from_json(text)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def measure_distance_sup(a: DiscreteMeasure, b: DiscreteMeasure, merge_tol: float = MERGE_TOL) -> float:
    """Largest atomwise weight difference over the union of the two supports."""
    pts = np.concatenate([a.support, b.support])
    wts = np.concatenate([a.weights, -b.weights])
    order = np.argsort(pts, kind="stable")
    pts, wts = pts[order], wts[order]
    worst, acc, last = 0.0, 0.0, None
    for x, w in zip(pts, wts):
        if last is not None and x - last >= merge_tol:
            worst = max(worst, abs(acc))
            acc = 0.0
        acc += w
        last = x
    return max(worst, abs(acc))


def barycenter(m: DiscreteMeasure) -> float:
    return m.mean


def quantile(m: DiscreteMeasure, u) -> np.ndarray:
    """Left-continuous generalized inverse ``F^{-1}(u) = inf{y : F(y) >= u}``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    idx = np.searchsorted(m.cumulative(), u_arr - 1e-14, side="left")
    idx = np.minimum(idx, len(m) - 1)
    out = m.support[idx]
    return out if out.ndim else float(out)


def _common_levels(*measures: DiscreteMeasure) -> np.ndarray:
    levels = np.unique(np.concatenate([[0.0]] + [m.cumulative() for m in measures]))
    levels = levels[(levels >= 0.0) & (levels <= 1.0)]
    if levels[-1] < 1.0:
        levels = np.append(levels, 1.0)
    return levels


def quantile_pieces(*measures: DiscreteMeasure):
    """Split (0,1) into intervals on which every quantile function is constant.

    Returns ``(lengths, values)`` where ``values[k]`` is the array of quantiles
    of ``measures[k]`` on each interval.
    """
    levels = _common_levels(*measures)
    lengths = np.diff(levels)
    keep = lengths > 0
    mids = 0.5 * (levels[:-1] + levels[1:])[keep]
    return lengths[keep], [quantile(m, mids) for m in measures]


def wasserstein(m1: DiscreteMeasure, m2: DiscreteMeasure, r: float = 1.0) -> float:
    """``W_r`` between two measures via the quantile coupling."""
    if r < 1:
        raise ValueError("r must be >= 1")
    lengths, (q1, q2) = quantile_pieces(m1, m2)
    total = float(np.dot(lengths, np.abs(q1 - q2) ** r))
    return total ** (1.0 / r)


# -- convex order -------------------------------------------------------------


@dataclass
class ConvexOrderResult:
    holds: bool
    coupling: Optional[object] = None
    reason: Optional[str] = None
    mean_gap: float = 0.0
    worst_call_violation: float = 0.0
    lp_feasible: Optional[bool] = None
    lp_residual: Optional[float] = None

    def __bool__(self) -> bool:
        return self.holds


def call_function_test(m1: DiscreteMeasure, m2: DiscreteMeasure, tol: float = CONVEX_ORDER_TOL):
    """Route (i): equal means and dominated call functions at all support points.

    Returns ``(holds, reason, mean_gap, worst_violation)``.
    """
    mean_gap = abs(m1.mean - m2.mean)
    strikes = np.union1d(m1.support, m2.support)
    violation = float(np.max(m1.call(strikes) - m2.call(strikes)))
    if mean_gap > tol:
        return False, "mean mismatch", mean_gap, violation
    if violation > tol:
        return False, "call-function violation", mean_gap, violation
    return True, None, mean_gap, violation


def convex_order_check(m1: DiscreteMeasure, m2: DiscreteMeasure, tol: float = CONVEX_ORDER_TOL) -> ConvexOrderResult:
    """Decide ``m1 <=_c m2`` by two independent routes.

    Route (i) compares means and call functions; route (ii) solves the LP
    feasibility problem for a martingale coupling. If they disagree an
    :class:`~wotbounds.errors.ConvexOrderInconsistency` is raised. On success
    the martingale coupling is attached to the result.
    """
    from .couplings import martingale_lp

    holds_i, reason, mean_gap, violation = call_function_test(m1, m2, tol)
    coupling, residual = martingale_lp(m1, m2)
    holds_ii = coupling is not None
    if holds_i != holds_ii:
        raise ConvexOrderInconsistency(
            f"convex-order routes disagree: call test says {holds_i} ({reason}), LP says {holds_ii}",
            reason=reason,
        )
    if not holds_ii:
        reason = reason or "LP infeasibility"
    return ConvexOrderResult(
        holds=holds_i,
        coupling=coupling,
        reason=reason,
        mean_gap=mean_gap,
        worst_call_violation=violation,
        lp_feasible=holds_ii,
        lp_residual=residual,
    )


# -- convex envelope ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnvelopeGrid:
    grid: np.ndarray
    values: np.ndarray
    hull_values: np.ndarray
    vertices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def slopes(self) -> np.ndarray:
        return np.diff(self.hull_values) / np.diff(self.grid)

    def __call__(self, z) -> np.ndarray:
        """Evaluate the hull with linear extrapolation past the grid ends."""
        z = np.asarray(z, dtype=float)
        g, h = self.grid, self.hull_values
        out = np.interp(z, g, h)
        s = self.slopes()
        out = np.where(z < g[0], h[0] + s[0] * (z - g[0]), out)
        out = np.where(z > g[-1], h[-1] + s[-1] * (z - g[-1]), out)
        return out if out.ndim else float(out)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_envelope(grid: Sequence[float], values: Sequence[float]) -> EnvelopeGrid:
    """Lower convex hull of ``{(grid_i, values_i)}`` sampled back on ``grid``.

    Monotone-chain construction; collinear points are dropped from the vertex
    list, so applying the envelope twice is a no-op.
    """
    g = np.asarray(grid, dtype=float).reshape(-1)
    v = np.asarray(values, dtype=float).reshape(-1)
    if g.size < 2 or g.size != v.size:
        raise ValueError("convex_envelope needs at least 2 grid points with matching values")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    hull: list[int] = []
    for i in range(g.size):
        p = (g[i], v[i])
        while len(hull) >= 2:
            o = (g[hull[-2]], v[hull[-2]])
            a = (g[hull[-1]], v[hull[-1]])
            if _cross(o, a, p) <= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    idx = np.array(hull, dtype=int)
    hull_values = np.interp(g, g[idx], v[idx])
    hull_values = np.minimum(hull_values, v)
    return EnvelopeGrid(_frozen(g), _frozen(v), _frozen(hull_values), idx)


def concave_envelope(grid: Sequence[float], values: Sequence[float]) -> EnvelopeGrid:
    """Upper concave hull (returned with ``hull_values`` >= ``values``)."""
    env = convex_envelope(grid, -np.asarray(values, dtype=float))
    return EnvelopeGrid(env.grid, _frozen(-env.values), _frozen(-env.hull_values), env.vertices)
