"""Weak optimal transport problems on finite supports, posed as LPs.

* :func:`classical_ot`: Kantorovich problem with a pointwise cost.
* :func:`wot_lower_barycentric` / :func:`wot_upper_barycentric`: inf/sup of
  ``Σ μ(x) θ(b(π_x) - x)`` for convex θ.
* :func:`relaxed_wot`: the problem over kernel distributions with kernels on a
  simplex grid of resolution ``m``.
* :func:`convexified_wot`: barycentric problem for a general θ, relaxed to
  kernel distributions (the convex-envelope reduction).
* :func:`weak_monotone_rearrangement`: the monotone 1-Lipschitz map whose
  push-forward is the W1-closest measure below ν in convex order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import lp_core
from .couplings import Coupling, KernelAtom, KernelDistribution, anticomonotone, transport_lp
from .errors import GridResolutionError, LpError
from .measures import DiscreteMeasure, concave_envelope, quantile_pieces, wasserstein
from .theta import PiecewiseLinear

RESOLUTION_CAP = 24
VALUE_TOL = 1e-8


# -- cost specifications ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Cost ``C(x, p)`` in one of three encodings.

    ``barycentric_theta``: ``C(x,p) = θ(b(p) - x)``.
    ``pointwise``: ``C(x,p) = Σ_y c_xy[x, y] p(y)``.
    ``kernel_direct``: ``c_xp(xs, W, ys)`` returns the ``(len(xs), len(W))``
    table of costs for kernels ``W`` (rows are weight vectors on ``ys``).
    """

    kind: str
    theta: Optional[PiecewiseLinear] = None
    convexity: Optional[str] = None
    c_xy: Optional[np.ndarray] = None
    c_xp: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "barycentric_theta":
            if self.theta is None:
                raise ValueError("barycentric_theta cost needs theta")
            actual = "convex" if self.theta.is_convex() else "general"
            declared = self.convexity or actual
            if declared != actual:
                raise ValueError(f"theta declared {declared} but samples are {actual}")
            object.__setattr__(self, "convexity", declared)
        elif self.kind == "pointwise":
            if self.c_xy is None:
                raise ValueError("pointwise cost needs c_xy")
            object.__setattr__(self, "c_xy", np.asarray(self.c_xy, dtype=float))
        elif self.kind == "kernel_direct":
            if self.c_xp is None:
                raise ValueError("kernel_direct cost needs c_xp")
        else:
            raise ValueError(f"unknown cost kind {self.kind!r}")

    @classmethod
    def barycentric(cls, theta: PiecewiseLinear, convexity: Optional[str] = None) -> "CostSpec":
        return cls("barycentric_theta", theta=theta, convexity=convexity)

    @classmethod
    def pointwise(cls, c_xy) -> "CostSpec":
        return cls("pointwise", c_xy=c_xy)

    @classmethod
    def kernel_direct(cls, fn: Callable) -> "CostSpec":
        return cls("kernel_direct", c_xp=fn)

    @classmethod
    def from_dict(cls, d: dict) -> "CostSpec":
        kind = d.get("kind", "barycentric_theta")
        if kind == "barycentric_theta":
            return cls.barycentric(PiecewiseLinear(d["theta_grid"], d["theta_values"]), d.get("convexity"))
        if kind == "pointwise":
            return cls.pointwise(d["c_xy"])
        raise ValueError("kernel_direct costs cannot be read from JSON")

    def kernel_table(self, xs: np.ndarray, W: np.ndarray, ys: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if self.kind == "barycentric_theta":
            return self.theta((W @ ys)[None, :] - xs[:, None])
        if self.kind == "pointwise":
            return self.c_xy @ W.T
        return np.asarray(self.c_xp(xs, W, ys), dtype=float)


def as_theta(theta) -> PiecewiseLinear:
    if isinstance(theta, CostSpec):
        if theta.kind != "barycentric_theta":
            raise ValueError("expected a barycentric cost")
        return theta.theta
    if isinstance(theta, PiecewiseLinear):
        return theta
    raise TypeError("theta must be a PiecewiseLinear or barycentric CostSpec")


# -- solutions --------------------------------------------------------------------


@dataclass
class WotSolution:
    value: float
    coupling: Optional[Coupling] = None
    kernel_dist: Optional[KernelDistribution] = None
    eta: Optional[DiscreteMeasure] = None
    mart: Optional[Coupling] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"value": self.value, "diagnostics": _jsonable(self.diagnostics)}
        if self.coupling is not None:
            out["coupling"] = self.coupling.to_dict()
        if self.kernel_dist is not None:
            out["kernel_dist"] = self.kernel_dist.to_list()
        if self.eta is not None:
            out["eta"] = self.eta.to_dict()
        if self.mart is not None:
            out["mart"] = self.mart.to_dict()
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _lp_diag(sol: lp_core.LpSolution) -> dict:
    return {"iterations": sol.iterations, "bland_switches": sol.bland_switches, "residuals": dict(sol.stats)}


# -- classical OT -------------------------------------------------------------------


def classical_ot(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, sense: str = "min") -> WotSolution:
    """Optimal transport with a pointwise cost matrix (or pointwise CostSpec)."""
    C = cost.c_xy if isinstance(cost, CostSpec) else np.asarray(cost, dtype=float)
    if C.shape != (len(mu), len(nu)):
        raise ValueError(f"cost matrix shape {C.shape} does not match supports ({len(mu)}, {len(nu)})")
    lp_sense = _sense(sense)
    plan, value, sol = transport_lp(mu.weights, nu.weights, C, lp_sense, name=f"classical_ot_{sense}")
    coupling = Coupling(mu.support, nu.support, plan)
    return WotSolution(value, coupling=coupling, diagnostics=_lp_diag(sol))


def _sense(sense: str) -> str:
    if sense in ("min", "minimize"):
        return "minimize"
    if sense in ("max", "maximize"):
        return "maximize"
    raise ValueError(f"sense must be min or max, got {sense!r}")


def quantile_upper_value(mu: DiscreteMeasure, nu: DiscreteMeasure, theta) -> float:
    """``∫_0^1 θ(F_ν^{-1}(1-u) - F_μ^{-1}(u)) du`` evaluated exactly."""
    theta = as_theta(theta)
    rev = DiscreteMeasure(-nu.support[::-1], nu.weights[::-1])
    lengths, (qm, qr) = quantile_pieces(mu, rev)
    return float(np.dot(lengths, theta(-qr - qm)))


# -- weak monotone rearrangement --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Rearrangement:
    """Sampled weak monotone rearrangement ``T`` on μ's support and ``ν* = T_*μ``."""

    x: np.ndarray
    T: np.ndarray
    nu_star: DiscreteMeasure
    shift: np.ndarray

    def __iter__(self):
        return iter((self.T, self.nu_star))

    def __call__(self, x):
        idx = np.searchsorted(self.x, np.asarray(x, dtype=float))
        return self.T[np.clip(idx, 0, self.x.size - 1)]

    def w1(self, mu: DiscreteMeasure) -> float:
        return float(np.dot(mu.weights, np.abs(self.shift)))


def weak_monotone_rearrangement(
    mu: DiscreteMeasure, nu: DiscreteMeasure, *, tol: float = 1e-8
) -> Rearrangement:
    """Closed form via the concave hull of ``u ↦ ∫_0^u (F_ν^{-1} - F_μ^{-1})``.

    On each μ-atom the hull has constant slope ``s_k``; ``T(x_k) = x_k + s_k``.
    """
    levels = np.unique(np.concatenate([[0.0], mu.cumulative(), nu.cumulative()]))
    lengths, (qm, qn) = quantile_pieces(mu, nu)
    phi = np.concatenate([[0.0], np.cumsum(lengths * (qn - qm))])
    phi[-1] = nu.mean - mu.mean
    hull = concave_envelope(levels, phi)
    slopes = hull.slopes()
    # each atom's slope is the hull chord over its quantile interval; sliver
    # pieces from near-duplicate levels are excluded from the consistency check
    cum = mu.cumulative()
    edges = np.concatenate([[0.0], cum])
    H = np.interp(edges, levels, hull.hull_values)
    shift = np.diff(H) / mu.weights
    mids = 0.5 * (levels[:-1] + levels[1:])
    atom_of_piece = np.minimum(np.searchsorted(cum, mids), len(mu) - 1)
    wide = np.diff(levels) > 1e-9
    for k in range(len(mu)):
        s = slopes[(atom_of_piece == k) & wide]
        if s.size and np.max(np.abs(s - shift[k])) > 1e-7 * max(1.0, abs(shift[k])):
            raise GridResolutionError(f"hull slope varies on mu atom {k}: spread {np.ptp(s):.3e}")
    T = mu.support + shift
    _check_monotone_lipschitz(mu.support, T, tol)
    nu_star = DiscreteMeasure.from_atoms(T, mu.weights, merge_tol=1e-12)
    return Rearrangement(mu.support.copy(), T, nu_star, shift)


def _check_monotone_lipschitz(x: np.ndarray, T: np.ndarray, tol: float):
    if x.size < 2:
        return
    dx, dT = np.diff(x), np.diff(T)
    if np.any(dT < -tol):
        i = int(np.argmin(dT))
        raise GridResolutionError(f"rearrangement decreases between atoms {i} and {i + 1}; refine H")
    if np.any(dT > dx + tol):
        i = int(np.argmax(dT - dx))
        raise GridResolutionError(f"rearrangement not 1-Lipschitz between atoms {i} and {i + 1}; refine H")


# -- barycentric LPs ---------------------------------------------------------------------


def candidate_grid(
    nu: DiscreteMeasure,
    nu_star: Optional[DiscreteMeasure] = None,
    extra: Optional[Sequence[float]] = None,
    m: Optional[int] = None,
    tol: float = 1e-12,
) -> np.ndarray:
    """Intermediate grid H: supp ν, supp ν*, optional points, optional m-barycenters.

    Points are clipped to the convex hull of supp ν and deduplicated.
    """
    pts = [nu.support]
    if nu_star is not None:
        pts.append(nu_star.support)
    if extra is not None:
        pts.append(np.asarray(extra, dtype=float).reshape(-1))
    if m is not None:
        pts.append(simplex_grid(len(nu), m) @ nu.support)
    H = np.concatenate(pts)
    lo, hi = nu.support[0], nu.support[-1]
    H = H[(H >= lo - tol) & (H <= hi + tol)]
    H = np.clip(np.sort(H), lo, hi)
    keep = np.concatenate([[True], np.diff(H) > tol])
    H = H[keep]
    # near-duplicates may have kept a neighbour instead of the exact atom of ν
    idx = np.abs(H[:, None] - nu.support[None, :]).argmin(axis=0)
    H[idx] = nu.support
    return H


@dataclass
class BarycentricLpResult:
    value: float
    pi: np.ndarray
    chi: np.ndarray
    H: np.ndarray
    sol: lp_core.LpSolution


def barycentric_lp(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: np.ndarray,
    H: np.ndarray,
    sense: str = "minimize",
    name: str = "barycentric",
) -> BarycentricLpResult:
    """Optimize ``Σ cost[i,l] π(x_i, h_l)`` over π ∈ Π(μ, η) and martingale χ ∈ Π(η, ν).

    Equality rows: π row sums = μ; π column sums = χ row sums; martingale
    condition per h; χ column sums = ν.
    """
    n, L, k = len(mu), H.size, len(nu)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (n, L):
        raise ValueError("cost matrix must have shape (len(mu), len(H))")
    npi, nchi = n * L, L * k
    A = np.zeros((n + 2 * L + k, npi + nchi))
    for i in range(n):
        A[i, i * L:(i + 1) * L] = 1.0
    for l in range(L):
        A[n + l, l:npi:L] = 1.0
        A[n + l, npi + l * k:npi + (l + 1) * k] = -1.0
        A[n + L + l, npi + l * k:npi + (l + 1) * k] = nu.support - H[l]
    for j in range(k):
        A[n + 2 * L + j, npi + j::k] = 1.0
    b = np.concatenate([mu.weights, np.zeros(2 * L), nu.weights])
    c = np.concatenate([cost.ravel(), np.zeros(nchi)])
    lp = lp_core.LinearProgram(c, A, b, _sense(sense), name)
    sol = lp_core.solve_lp(lp)
    if not sol.optimal:
        raise LpError(f"barycentric LP {name} returned {sol.status}")
    pi = sol.primal[:npi].reshape(n, L)
    chi = sol.primal[npi:].reshape(L, k)
    return BarycentricLpResult(sol.value, pi, chi, H, sol)


def _barycentric_solution(mu, nu, res: BarycentricLpResult, cost: np.ndarray, diag: dict) -> WotSolution:
    pi = np.maximum(res.pi, 0.0)
    chi = np.maximum(res.chi, 0.0)
    pi /= pi.sum()
    chi /= chi.sum()
    coupling = Coupling(mu.support, res.H, pi)
    eta_w = pi.sum(axis=0)
    used = eta_w > 1e-13
    eta = DiscreteMeasure.from_atoms(res.H[used], eta_w[used])
    mart = Coupling(res.H[used], nu.support, chi[used])
    kd = KernelDistribution(
        [
            KernelAtom(float(mu.support[i]), DiscreteMeasure.from_atoms(
                nu.support[chi[l] > 1e-15], chi[l][chi[l] > 1e-15] / chi[l].sum(), drop_below=1e-16
            ), float(pi[i, l]))
            for i in range(len(mu))
            for l in range(res.H.size)
            if pi[i, l] > 1e-15 and chi[l].sum() > 1e-15
        ],
        renormalize=True,
    )
    reeval = float(np.sum(pi * cost))
    diag = dict(diag)
    diag.update(_lp_diag(res.sol))
    diag["reevaluated_value"] = reeval
    diag["martingale_residual"] = mart.martingale_residual()
    diag["grid_size"] = int(res.H.size)
    return WotSolution(res.value, coupling=coupling, kernel_dist=kd, eta=eta, mart=mart, diagnostics=diag)


def wot_lower_barycentric(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    theta,
    *,
    extra_points: Optional[Sequence[float]] = None,
    m: Optional[int] = None,
) -> WotSolution:
    """Inf of ``Σ μ(x) θ(b(π_x) - x)`` over couplings, for convex θ.

    The LP uses H = supp ν ∪ supp ν* (ν* from the weak monotone
    rearrangement), which contains an optimal intermediate marginal for every
    convex θ. ``extra_points`` / ``m`` enlarge H.
    """
    theta = as_theta(theta)
    if not theta.is_convex():
        raise ValueError("wot_lower_barycentric needs a convex theta; use convexified_wot")
    wmr = weak_monotone_rearrangement(mu, nu)
    H = candidate_grid(nu, wmr.nu_star, extra_points, m)
    cost = theta(H[None, :] - mu.support[:, None])
    res = barycentric_lp(mu, nu, cost, H, "minimize", "wot_lower")
    closed = float(np.dot(mu.weights, theta(wmr.shift)))
    diag = {"rearrangement_value": closed, "rearrangement_gap": res.value - closed}
    out = _barycentric_solution(mu, nu, res, cost, diag)
    out.diagnostics["T"] = wmr.T.tolist()
    return out


def wot_upper_barycentric(mu: DiscreteMeasure, nu: DiscreteMeasure, theta) -> WotSolution:
    """Sup over kernel distributions of ``Σ θ(b(p) - x)``; a classical OT max.

    The anticomonotone coupling is returned after checking it against the LP.
    """
    theta = as_theta(theta)
    if not theta.is_convex():
        raise ValueError("wot_upper_barycentric needs a convex theta")
    C = theta(nu.support[None, :] - mu.support[:, None])
    lp = classical_ot(mu, nu, C, "max")
    anti = anticomonotone(mu, nu)
    anti_value = anti.expect(C)
    gap = lp.value - anti_value
    if abs(gap) > VALUE_TOL * (1 + abs(lp.value)):
        raise LpError(f"anticomonotone coupling is not optimal: LP {lp.value:.12g} vs {anti_value:.12g}")
    diag = dict(lp.diagnostics)
    diag.update({"lp_value": lp.value, "anticomonotone_value": anti_value, "quantile_value": quantile_upper_value(mu, nu, theta)})
    kd = KernelDistribution(
        KernelAtom(float(x), DiscreteMeasure.dirac(y), float(anti.matrix[i, j]))
        for i, x in enumerate(mu.support)
        for j, y in enumerate(nu.support)
        if anti.matrix[i, j] > 1e-15
    )
    return WotSolution(anti_value, coupling=anti, kernel_dist=kd, eta=nu, diagnostics=diag)


# -- relaxed problem over kernel distributions ------------------------------------------------


def simplex_grid(k: int, m: int) -> np.ndarray:
    """All weight vectors on ``k`` points with entries in ``{0, 1/m, ..., 1}``.

    Rows come in lexicographic order of the stars-and-bars bar positions.
    """
    if k < 1 or m < 1:
        raise ValueError("need k >= 1 and m >= 1")
    rows = []
    for bars in itertools.combinations(range(m + k - 1), k - 1):
        prev, counts = -1, []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(m + k - 2 - prev)
        rows.append(counts)
    return np.array(rows, dtype=float) / m


def default_resolution(nu: DiscreteMeasure, cap: int = RESOLUTION_CAP) -> tuple[int, bool]:
    """Least common denominator of ν's weights, capped. Returns ``(m, exact)``."""
    lcm = 1
    for w in nu.weights:
        f = Fraction(float(w)).limit_denominator(cap)
        if abs(float(f) - w) > 1e-12:
            return cap, False
        lcm = lcm * f.denominator // math.gcd(lcm, f.denominator)
        if lcm > cap:
            return cap, False
    return lcm, True


def relaxed_wot(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: CostSpec,
    m: Optional[int] = None,
    sense: str = "min",
) -> WotSolution:
    """LP over ``Q(x, p)`` with ``p`` on the resolution-``m`` simplex grid over supp ν."""
    exact = True
    if m is None:
        m, exact = default_resolution(nu)
    if m < 1:
        raise ValueError("resolution m must be >= 1")
    W = simplex_grid(len(nu), m)
    n, K, k = len(mu), W.shape[0], len(nu)
    table = cost.kernel_table(mu.support, W, nu.support)
    if table.shape != (n, K):
        raise ValueError(f"cost table has shape {table.shape}, expected {(n, K)}")
    A = np.zeros((n + k, n * K))
    for i in range(n):
        A[i, i * K:(i + 1) * K] = 1.0
        A[n:, i * K:(i + 1) * K] = W.T
    b = np.concatenate([mu.weights, nu.weights])
    lp = lp_core.LinearProgram(table.ravel(), A, b, _sense(sense), f"relaxed_wot_m{m}")
    sol = lp_core.solve_lp(lp)
    if sol.status == lp_core.INFEASIBLE:
        raise LpError(f"relaxed problem infeasible at m={m}; try m={default_resolution(nu)[0]}")
    if not sol.optimal:
        raise LpError(f"relaxed problem returned {sol.status}")
    Q = np.maximum(sol.primal.reshape(n, K), 0.0)
    atoms = []
    for i in range(n):
        for p in np.flatnonzero(Q[i] > 1e-15):
            keep = W[p] > 0
            atoms.append(KernelAtom(float(mu.support[i]), DiscreteMeasure(nu.support[keep], W[p][keep] / W[p][keep].sum()), float(Q[i, p])))
    kd = KernelDistribution(atoms, renormalize=True)
    diag = _lp_diag(sol)
    diag.update({"m": m, "approximate": not exact, "kernels": K, "reevaluated_value": float(np.sum(Q * table))})
    return WotSolution(sol.value, kernel_dist=kd, diagnostics=diag)


# -- convexification --------------------------------------------------------------------------


def convexified_wot(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    theta: PiecewiseLinear,
    *,
    grid: int = 41,
    extra_points: Optional[Sequence[float]] = None,
) -> WotSolution:
    """Barycentric problem for a general θ, relaxed to kernel distributions.

    This is the LP of :func:`wot_lower_barycentric` with the actual θ and
    a richer H: supp ν, supp ν*, ``x + kinks(θ)`` and a uniform grid of
    ``grid`` points, all clipped to the hull of supp ν. Splitting an atom
    across barycenters realizes the convex envelope of the cost in the
    kernel. The value obtained by substituting θ** into the convex solver is
    reported in diagnostics as ``theta_envelope_value``.
    """
    theta = as_theta(theta)
    env = theta.envelope()
    if theta.is_convex():
        sol = wot_lower_barycentric(mu, nu, theta, extra_points=extra_points)
        sol.diagnostics.update({"theta_envelope_value": sol.value, "envelope": env.to_dict(), "route": "convex"})
        return sol
    wmr = weak_monotone_rearrangement(mu, nu)
    lo, hi = nu.support[0], nu.support[-1]
    shifted = (mu.support[:, None] + np.concatenate([theta.knots, [0.0]])[None, :]).ravel()
    pts = [shifted, np.linspace(lo, hi, max(grid, 2))]
    if extra_points is not None:
        pts.append(np.asarray(extra_points, dtype=float))
    H = candidate_grid(nu, wmr.nu_star, np.concatenate(pts))
    cost = theta(H[None, :] - mu.support[:, None])
    res = barycentric_lp(mu, nu, cost, H, "minimize", "convexified_wot")
    out = _barycentric_solution(mu, nu, res, cost, {"route": "relaxed_barycentric"})
    env_sol = wot_lower_barycentric(mu, nu, env)
    out.diagnostics["theta_envelope_value"] = env_sol.value
    out.diagnostics["envelope"] = env.to_dict()
    return out
