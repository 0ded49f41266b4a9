"""Dual objects for barycentric transport: S-maps, potentials and hedges.

A hedge triplet ``(φ, ψ, Δ)`` is a static portfolio in X₁ and Y₂ vanillas
plus one rebalance ``Δ(y₁)(y₂ - y₁)``. For the caplet payoff
``Φ̂(x, y) = (y - x)^+`` the optimal triplets are one-parameter families
indexed by a threshold, recovered here from the monotone maps of the primal
solutions. For general payoffs :func:`general_dual` solves the dual LP over
concave (sub-hedge) or convex (super-hedge) ψ on a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import lp_core
from .errors import CertificateError, GridResolutionError, LpError
from .measures import DiscreteMeasure, convex_envelope
from .theta import PiecewiseLinear

HEDGE_TOL = 1e-9
NEG_INF = -math.inf
POS_INF = math.inf


# -- S-maps ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SMap:
    """Generalized inverse of a sampled monotone map ``T``.

    Lower: ``S(y) = inf{x : T(x) >= y}`` for nondecreasing T. Upper:
    ``S(y) = sup{x : T(x) >= y}`` for nonincreasing T. ``edges`` are the
    distinct values of T in increasing order; on ``(edges[j-1], edges[j]]``
    the map equals ``values[j]`` and at ``edges[0]`` it equals ``values[0]``.
    """

    direction: str
    x: np.ndarray
    T: np.ndarray
    edges: np.ndarray
    values: np.ndarray

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.direction == "lower":
            k = np.searchsorted(self.T, y, side="left")
            out = np.where(k < self.x.size, self.x[np.minimum(k, self.x.size - 1)], POS_INF)
        else:
            count = np.searchsorted(-self.T, -y, side="right")
            out = np.where(count > 0, self.x[np.maximum(count - 1, 0)], NEG_INF)
        return out if out.ndim else float(out)

    def samples(self, grid: Sequence[float]) -> np.ndarray:
        g = np.asarray(grid, dtype=float)
        return np.column_stack([g, self(g)])

    def difference_is_monotone(self, grid: Optional[Sequence[float]] = None, tol: float = 1e-12) -> bool:
        """Discrete check of ``y - S(y)`` on the edges of the map."""
        g = self.edges if grid is None else np.asarray(grid, dtype=float)
        d = g - self(g)
        d = d[np.isfinite(d)]
        steps = np.diff(d)
        return bool(np.all(steps <= tol)) if self.direction == "lower" else bool(np.all(steps >= -tol))


def build_s_map(x: Sequence[float], T: Sequence[float], direction: str = "lower", tol: float = 1e-12) -> SMap:
    x = np.asarray(x, dtype=float).reshape(-1)
    T = np.asarray(T, dtype=float).reshape(-1)
    if x.size == 0 or x.size != T.size or np.any(np.diff(x) <= 0):
        raise ValueError("T must be sampled on a strictly increasing, non-empty grid")
    if direction == "lower":
        if np.any(np.diff(T) < -tol):
            raise ValueError("lower S-map needs a nondecreasing T")
        T = np.maximum.accumulate(T)
    elif direction == "upper":
        if np.any(np.diff(T) > tol):
            raise ValueError("upper S-map needs a nonincreasing T")
        T = np.minimum.accumulate(T)
    else:
        raise ValueError("direction must be 'lower' or 'upper'")
    edges = np.unique(T)
    keep = np.concatenate([[True], np.diff(edges) > tol])
    edges = edges[keep]
    if direction == "lower":
        # first x with T >= edge
        values = x[np.minimum(np.searchsorted(T, edges - tol, side="left"), x.size - 1)]
    else:
        # last x with T >= edge
        values = x[np.searchsorted(-T, -edges + tol, side="right") - 1]
    return SMap(direction, x, T, edges, values)


# -- thresholds ------------------------------------------------------------------


@dataclass(frozen=True)
class Threshold:
    value: float
    kind: str  # finite | degenerate_zero | -inf | +inf | endpoint

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


def find_threshold(s: SMap, tol: float = 1e-12) -> Threshold:
    """``sup{y : y - S(y) > 0}`` (lower) or ``inf{y : y - S(y) > 0}`` (upper).

    Computed on each piece of the map, where ``y - S(y)`` is affine.
    """
    e, v = s.edges, s.values
    if s.direction == "lower":
        if np.all(np.abs(s.T - s.x) <= tol):
            return Threshold(float(e[0]), "degenerate_zero")
        cands = e[e > v + tol]
        if cands.size == 0:
            return Threshold(NEG_INF, "-inf")
        return Threshold(float(cands.max()), "finite")
    cands = []
    if e[0] > v[0] + tol:
        cands.append(e[0])
    for j in range(1, e.size):
        if e[j] > v[j] + tol:
            cands.append(max(e[j - 1], v[j]))
    if not cands:
        return Threshold(float(e[-1]), "endpoint")
    return Threshold(float(min(cands)), "finite")


# -- potentials ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Piecewise-linear function on a grid, extended linearly."""

    grid: np.ndarray
    values: np.ndarray

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        g, v = self.grid, self.values
        if g.size == 1:
            out = np.full(z.shape, v[0])
            return out if out.ndim else float(out)
        s0 = (v[1] - v[0]) / (g[1] - g[0])
        s1 = (v[-1] - v[-2]) / (g[-1] - g[-2])
        out = np.interp(z, g, v)
        out = np.where(z < g[0], v[0] + s0 * (z - g[0]), out)
        out = np.where(z > g[-1], v[-1] + s1 * (z - g[-1]), out)
        return out if out.ndim else float(out)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.grid)

    def is_concave(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.diff(self.slopes()) <= tol))

    def is_convex(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.diff(self.slopes()) >= -tol))

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "values": self.values.tolist()}


def _psi_antiderivative(theta: PiecewiseLinear, s: SMap, y: np.ndarray) -> np.ndarray:
    """``∫_{a}^{y} ∂_-θ(z - S(z)) dz`` from the left domain end, exactly per piece."""
    e, v = s.edges, s.values
    out = np.zeros_like(y)
    for j in range(1, e.size):
        lo, hi = e[j - 1], e[j]
        top = np.clip(y, lo, hi)
        out += np.where(y > lo, theta(top - v[j]) - theta(lo - v[j]), 0.0)
    return out


def build_psi(
    theta: PiecewiseLinear, s: SMap, y0: float, grid: Optional[Sequence[float]] = None
) -> SampledFunction:
    """ψ(y) = ∫_{y0}^{y} ∂_-θ(z - S(z)) dz on the domain of ``s``.

    On a piece where ``S ≡ x`` the integrand has antiderivative ``θ(z - x)``,
    so the integral is exact. ``grid`` defaults to the edges of ``s`` plus
    the kinks ``x + kinks(θ)`` falling inside the domain.
    """
    a, b = s.domain
    if not (a - 1e-12 <= y0 <= b + 1e-12):
        raise ValueError(f"y0={y0} lies outside the domain [{a}, {b}]")
    if grid is None:
        kinks = (s.values[:, None] + np.concatenate([theta.kinks(), theta.knots])[None, :]).ravel()
        pts = np.concatenate([s.edges, kinks, [y0]])
        grid = np.unique(pts[(pts >= a) & (pts <= b)])
    g = np.unique(np.clip(np.asarray(grid, dtype=float), a, b))
    vals = _psi_antiderivative(theta, s, g) - _psi_antiderivative(theta, s, np.array([float(y0)]))[0]
    return SampledFunction(g, vals)


def snap_y0(nu: DiscreteMeasure, grid: Sequence[float]) -> float:
    """Barycenter of ν snapped to the nearest grid point."""
    g = np.asarray(grid, dtype=float)
    return float(g[np.argmin(np.abs(g - nu.mean))])


def inf_convolution(
    psi: SampledFunction,
    x_grid: Sequence[float],
    *,
    theta: Optional[PiecewiseLinear] = None,
    c_xy: Optional[Callable] = None,
    y_grid: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """``R_Cψ(x)`` on ``x_grid``.

    Barycentric ``θ``: ``min_y θ(y - x) + (-ψ)**(y)`` with the envelope taken
    on the y-grid. Pointwise ``c_xy(x, y)``: ``min_y c(x, y) - ψ(y)``.
    """
    xs = np.asarray(x_grid, dtype=float)
    ys = psi.grid if y_grid is None else np.asarray(y_grid, dtype=float)
    if ys.size == 0 or xs.size == 0:
        raise ValueError("inf_convolution needs non-empty grids")
    if (theta is None) == (c_xy is None):
        raise ValueError("give exactly one of theta or c_xy")
    minus_psi = -psi(ys)
    if theta is not None:
        h = convex_envelope(ys, minus_psi).hull_values if ys.size >= 2 else minus_psi
        table = theta(ys[None, :] - xs[:, None]) + h[None, :]
    else:
        table = np.asarray(c_xy(xs[:, None], ys[None, :]), dtype=float) + minus_psi[None, :]
    return table.min(axis=1)


# -- triplets ----------------------------------------------------------------------


@dataclass
class DualTriplet:
    phi: Callable
    psi: Callable
    delta: Callable
    threshold: float
    sense: str  # sub | super
    meta: dict = field(default_factory=dict)
    report: Optional["HedgeReport"] = None

    def value(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return mu.expect(self.phi) + nu.expect(self.psi)

    def to_dict(self, x_grid, y_grid) -> dict:
        xg = np.asarray(x_grid, dtype=float)
        yg = np.asarray(y_grid, dtype=float)
        out = {
            "sense": self.sense,
            "threshold": self.threshold if math.isfinite(self.threshold) else repr(self.threshold),
            "x_grid": xg.tolist(),
            "y_grid": yg.tolist(),
            "phi": np.asarray(self.phi(xg), dtype=float).tolist(),
            "psi": np.asarray(self.psi(yg), dtype=float).tolist(),
            "delta": np.asarray(self.delta(yg), dtype=float).tolist(),
            "meta": self.meta,
        }
        if self.report is not None:
            out["verification"] = self.report.to_dict()
        return out


def _zero(z):
    return np.zeros_like(np.asarray(z, dtype=float))


def caplet_triplets(a: float, direction: str) -> DualTriplet:
    """Hedge triplets for ``Φ̂(x, y) = (y - x)^+``.

    lower (sub-hedge): ``φ = (a - x)^+``, ``ψ = -(a - y)^+``, ``Δ = -1{y < a}``.
    upper (super-hedge): ``φ = (a - x)^+``, ``ψ = (y - a)^+``, ``Δ = -1{y > a}``.
    """
    if direction == "lower":
        if a == NEG_INF:
            return DualTriplet(_zero, _zero, _zero, a, "sub", {"degenerate": "zero"})
        if a == POS_INF:
            return DualTriplet(
                lambda x: -np.asarray(x, dtype=float),
                lambda y: np.asarray(y, dtype=float),
                lambda y: -np.ones_like(np.asarray(y, dtype=float)),
                a,
                "sub",
                {"degenerate": "linear"},
            )
        return DualTriplet(
            lambda x: np.maximum(a - np.asarray(x, dtype=float), 0.0),
            lambda y: -np.maximum(a - np.asarray(y, dtype=float), 0.0),
            lambda y: -(np.asarray(y, dtype=float) < a).astype(float),
            a,
            "sub",
        )
    if direction == "upper":
        if not math.isfinite(a):
            raise ValueError("upper caplet triplet needs a finite threshold")
        return DualTriplet(
            lambda x: np.maximum(a - np.asarray(x, dtype=float), 0.0),
            lambda y: np.maximum(np.asarray(y, dtype=float) - a, 0.0),
            lambda y: -(np.asarray(y, dtype=float) > a).astype(float),
            a,
            "super",
        )
    raise ValueError("direction must be 'lower' or 'upper'")


def caplet_value(mu: DiscreteMeasure, nu: DiscreteMeasure, a: float, direction: str) -> float:
    """Certificate value ``μ(φ) + ν(ψ)`` of :func:`caplet_triplets` in closed form."""
    if direction == "lower":
        if a == NEG_INF:
            return 0.0
        if a == POS_INF:
            return nu.mean - mu.mean
        return float(mu.put(a) - nu.put(a))
    return float(mu.put(a) + nu.call(a))


# -- verification -------------------------------------------------------------------


@dataclass
class HedgeReport:
    worst: float
    value: float
    ok: bool
    point: tuple
    n_points: int

    def to_dict(self) -> dict:
        return {"worst_violation": self.worst, "certificate_value": self.value, "ok": self.ok,
                "worst_point": list(self.point), "grid_points": self.n_points}


def verify_hedge(
    t: DualTriplet,
    payoff: Callable,
    x_grid: Sequence[float],
    y1_grid: Sequence[float],
    y2_grid: Sequence[float],
    mu: Optional[DiscreteMeasure] = None,
    nu: Optional[DiscreteMeasure] = None,
    tol: float = HEDGE_TOL,
) -> HedgeReport:
    """Evaluate ``φ(x) + ψ(y₂) + Δ(y₁)(y₂ - y₁) - Φ̂(x, y₁)`` on the triple grid.

    The worst value is the minimum for a super-hedge (must be ``>= -tol``)
    and the maximum for a sub-hedge (must be ``<= tol``).
    """
    xs = np.asarray(x_grid, dtype=float).reshape(-1)
    y1 = np.asarray(y1_grid, dtype=float).reshape(-1)
    y2 = np.asarray(y2_grid, dtype=float).reshape(-1)
    if xs.size == 0 or y1.size == 0 or y2.size == 0:
        raise ValueError("verification grids must be non-empty")
    phi = np.asarray(t.phi(xs), dtype=float)
    psi = np.asarray(t.psi(y2), dtype=float)
    delta = np.asarray(t.delta(y1), dtype=float)
    pay = np.asarray(payoff(xs[:, None], y1[None, :]), dtype=float)
    if phi.shape != xs.shape or psi.shape != y2.shape or delta.shape != y1.shape or pay.shape != (xs.size, y1.size):
        raise ValueError("sampled functions do not match their grids")
    # slack[i, a, b] for x_i, y1_a, y2_b
    slack = (
        phi[:, None, None]
        + psi[None, None, :]
        + delta[None, :, None] * (y2[None, None, :] - y1[None, :, None])
        - pay[:, :, None]
    )
    if t.sense == "super":
        idx = np.unravel_index(np.argmin(slack), slack.shape)
        worst = float(slack[idx])
        ok = worst >= -tol
    else:
        idx = np.unravel_index(np.argmax(slack), slack.shape)
        worst = float(slack[idx])
        ok = worst <= tol
    point = (float(xs[idx[0]]), float(y1[idx[1]]), float(y2[idx[2]]))
    value = t.value(mu, nu) if (mu is not None and nu is not None) else float("nan")
    return HedgeReport(worst, value, bool(ok), point, int(slack.size))


def verification_grid(mu: DiscreteMeasure, nu: DiscreteMeasure, *extra, pad: float = 0.0):
    """Support points, extra kinks and (optionally) one padded point each side."""
    pts_x = [mu.support]
    pts_y = [nu.support, mu.support]
    for e in extra:
        arr = np.atleast_1d(np.asarray(e, dtype=float))
        arr = arr[np.isfinite(arr)]
        pts_x.append(arr)
        pts_y.append(arr)
    xs = np.unique(np.concatenate(pts_x))
    ys = np.unique(np.concatenate(pts_y))
    if pad > 0:
        xs = np.unique(np.concatenate([xs, [xs[0] - pad, xs[-1] + pad]]))
        ys = np.unique(np.concatenate([ys, [ys[0] - pad, ys[-1] + pad]]))
    return xs, ys


# -- caplet certificates ---------------------------------------------------------


def upper_map(mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    """``T̄(x_k) = F_ν^{-1}(1 - F_μ(x_{k-1}))``, the anticomonotone partner of ``x_k``."""
    before = np.concatenate([[0.0], mu.cumulative()[:-1]])
    level = 1.0 - before
    idx = np.searchsorted(nu.cumulative(), level - 1e-14, side="left")
    return nu.support[np.minimum(idx, len(nu) - 1)]


@dataclass
class CapletCertificate:
    triplet: DualTriplet
    value: float
    source: str  # s_map | refined
    s_map: SMap
    threshold: Threshold
    report: HedgeReport


def _refine(mu, nu, direction, candidates) -> tuple[float, float]:
    cands = np.unique(np.asarray(candidates, dtype=float))
    vals = np.array([caplet_value(mu, nu, a, direction) for a in cands])
    if direction == "lower":
        best = int(np.argmax(vals))
        a, v = float(cands[best]), float(vals[best])
        for sentinel in (NEG_INF, POS_INF):
            sv = caplet_value(mu, nu, sentinel, direction)
            if sv > v + 1e-15:
                a, v = sentinel, sv
        return a, v
    best = int(np.argmin(vals))
    return float(cands[best]), float(vals[best])


def caplet_certificate(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    direction: str,
    T: Optional[np.ndarray] = None,
    pad: float = 1.0,
) -> CapletCertificate:
    """Certificate for the lower or upper caplet bound, verified on a grid.

    The threshold is read from the S-map of ``T`` (the weak monotone
    rearrangement for ``lower``, the anticomonotone map for ``upper``).
    With atomic μ the S-map threshold can leave a gap; every threshold gives a
    valid hedge, so the best one over the kink candidates is then used.
    """
    if direction == "lower":
        if T is None:
            from .wot_solvers import weak_monotone_rearrangement

            T = weak_monotone_rearrangement(mu, nu).T
        s = build_s_map(mu.support, T, "lower")
    elif direction == "upper":
        if T is None:
            T = upper_map(mu, nu)
        s = build_s_map(mu.support, T, "upper")
    else:
        raise ValueError("direction must be 'lower' or 'upper'")
    thr = find_threshold(s)
    a0 = NEG_INF if thr.kind == "degenerate_zero" else thr.value
    v0 = caplet_value(mu, nu, a0, direction)
    cands = np.concatenate([mu.support, nu.support, T])
    a1, v1 = _refine(mu, nu, direction, cands)
    improves = v1 > v0 + 1e-12 if direction == "lower" else v1 < v0 - 1e-12
    a, v, source = (a1, v1, "refined") if improves else (a0, v0, "s_map")
    trip = caplet_triplets(a, direction)
    trip.meta.update({"threshold_kind": thr.kind, "s_map_threshold": thr.value, "source": source})
    xs, ys = verification_grid(mu, nu, T, a, pad=pad)
    report = verify_hedge(trip, lambda x, y: np.maximum(y - x, 0.0), xs, ys, ys, mu, nu)
    trip.report = report
    if not report.ok:
        raise CertificateError(
            f"{direction} caplet hedge fails at {report.point} by {report.worst:.3e}",
            violation=report.worst,
            point=report.point,
        )
    return CapletCertificate(trip, v, source, s, thr, report)


# -- general payoffs ----------------------------------------------------------------


@dataclass
class GeneralDual:
    value: float
    phi: np.ndarray
    psi: SampledFunction
    triplet: DualTriplet
    sol: lp_core.LpSolution


def general_dual(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    payoff: Callable,
    grid: Sequence[float],
    sense: str = "sub",
) -> GeneralDual:
    """Dual LP over ``φ`` on supp μ and concave (sub) / convex (super) ψ on ``grid``.

    sub: ``max μ(φ) + ν(ψ)`` s.t. ``φ(x_i) + ψ(g_l) <= Φ̂(x_i, g_l)``.
    super: ``min μ(φ) + ν(ψ)`` s.t. ``φ(x_i) + ψ(g_l) >= Φ̂(x_i, g_l)``.
    ``grid`` must contain supp ν; Δ is minus a one-sided slope of ψ.
    """
    g = np.unique(np.asarray(grid, dtype=float))
    pos = np.searchsorted(g, nu.support)
    if np.any(pos >= g.size) or np.any(np.abs(g[np.minimum(pos, g.size - 1)] - nu.support) > 1e-12):
        raise GridResolutionError("dual grid must contain the support of nu")
    n, L = len(mu), g.size
    pay = np.asarray(payoff(mu.support[:, None], g[None, :]), dtype=float)
    nu_w = np.zeros(L)
    nu_w[pos] = nu.weights
    sgn = 1.0 if sense == "sub" else -1.0
    b = lp_core.LpBuilder("maximize" if sense == "sub" else "minimize", f"general_dual_{sense}")
    b.add_variables("phi", n, mu.weights, free=True)
    b.add_variables("psi", L, nu_w, free=True)
    for i in range(n):
        block_phi = np.zeros((L, n))
        block_phi[:, i] = 1.0
        b.add_ub_block({"phi": sgn * block_phi, "psi": sgn * np.eye(L)}, sgn * pay[i])
    if L >= 3:
        h = np.diff(g)
        D = np.zeros((L - 2, L))
        for l in range(L - 2):
            # concave: ψ(g_{l+1}) >= the chord through its neighbours; entries stay in [-1, 1]
            D[l, l] = h[l + 1] / (h[l] + h[l + 1])
            D[l, l + 1] = -1.0
            D[l, l + 2] = h[l] / (h[l] + h[l + 1])
        b.add_ub_block({"psi": sgn * D}, np.zeros(L - 2))
    built = b.build().solve()
    if built.status != lp_core.OPTIMAL:
        raise LpError(f"general dual returned {built.status}")
    psi = SampledFunction(g, built["psi"].copy())
    # tighten φ to the inf/sup-convolution on the grid
    if sense == "sub":
        phi = (pay - psi.values[None, :]).min(axis=1)
    else:
        phi = (pay - psi.values[None, :]).max(axis=1)
    slopes = psi.slopes() if L >= 2 else np.zeros(1)
    xs = mu.support.copy()

    def phi_fn(x, xs=xs, phi=phi):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(xs, x)
        idx = np.clip(idx, 0, xs.size - 1)
        exact = np.isclose(xs[idx], x, atol=1e-12, rtol=0)
        return np.where(exact, phi[idx], np.interp(x, xs, phi))

    def delta_fn(y, g=g, slopes=slopes):
        y = np.asarray(y, dtype=float)
        # left slope at y (right slope at the left end); any supergradient works
        idx = np.clip(np.searchsorted(g, y, side="left") - 1, 0, slopes.size - 1)
        return -slopes[idx]

    trip = DualTriplet(phi_fn, psi, delta_fn, NEG_INF, sense, {"kind": "general_dual", "grid_size": int(L)})
    value = float(mu.weights @ phi + nu.weights @ psi(nu.support))
    return GeneralDual(value, phi, psi, trip, built.raw)
