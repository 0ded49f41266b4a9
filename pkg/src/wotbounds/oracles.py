"""Independent brute-force oracles and randomized instance generators.

These deliberately avoid the LP machinery where possible, so they can
cross-check it: vertex enumeration over couplings, exhaustive search over
monotone grid maps, envelopes from affine minorants.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .couplings import KernelAtom, KernelDistribution, lambda_member
from .dual_certificates import caplet_certificate
from .measures import DiscreteMeasure, convex_order_check, wasserstein
from .theta import PiecewiseLinear
from .wot_solvers import (
    CostSpec,
    WotSolution,
    quantile_upper_value,
    relaxed_wot,
    weak_monotone_rearrangement,
    wot_lower_barycentric,
    wot_upper_barycentric,
)

# -- couplings-only (Π) values ----------------------------------------------------


def pi_value_two_atom(
    mu: DiscreteMeasure, nu: DiscreteMeasure, theta_fn: Callable, sense: str = "max", breakpoints=(0.0,)
) -> float:
    """Optimize ``Σ μ_i θ(b_i - x_i)`` over couplings when ν has two atoms.

    A kernel on two points is fixed by its barycenter ``b_i ∈ [y₁, y₂]``;
    the column constraint reduces to ``Σ μ_i b_i = b(ν)``. θ is piecewise
    linear with kinks in ``breakpoints``, so an optimum sits where at most one
    ``b_i`` is off the cell boundaries; those candidates are enumerated.
    """
    if len(nu) != 2:
        raise ValueError("two-atom oracle needs len(nu) == 2")
    lo, hi = nu.support
    target = nu.mean
    x, w = mu.support, mu.weights
    n = x.size
    cands = []
    for i in range(n):
        pts = np.concatenate([[lo, hi], x[i] + np.asarray(breakpoints, dtype=float)])
        cands.append(np.unique(pts[(pts >= lo) & (pts <= hi)]))
    if n == 1:
        return float(theta_fn(target - x[0]))
    best = -math.inf if sense == "max" else math.inf
    for free in range(n):
        others = [j for j in range(n) if j != free]
        grids = np.meshgrid(*[cands[j] for j in others], indexing="ij")
        B = np.stack([g.ravel() for g in grids], axis=1)
        bf = (target - B @ w[others]) / w[free]
        ok = (bf >= lo - 1e-12) & (bf <= hi + 1e-12)
        if not np.any(ok):
            continue
        bf = np.clip(bf[ok], lo, hi)
        B = B[ok]
        val = w[free] * theta_fn(bf - x[free]) + (theta_fn(B - x[others][None, :]) * w[others][None, :]).sum(axis=1)
        best = max(best, float(val.max())) if sense == "max" else min(best, float(val.min()))
    return best


def _transport_vertices(a: np.ndarray, b: np.ndarray):
    """All vertices of the transportation polytope Π(a, b) (small sizes only)."""
    n, k = a.size, b.size
    A = np.vstack([np.kron(np.eye(n), np.ones(k)), np.kron(np.ones(n), np.eye(k))])[:-1]
    rhs = np.concatenate([a, b])[:-1]
    r = n + k - 1
    seen = set()
    for cols in itertools.combinations(range(n * k), r):
        M = A[:, cols]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, rhs)
        if np.any(x < -1e-12):
            continue
        P = np.zeros(n * k)
        P[list(cols)] = np.maximum(x, 0.0)
        key = tuple(np.round(P, 12))
        if key in seen:
            continue
        seen.add(key)
        yield P.reshape(n, k)


def pi_sup_bruteforce(mu: DiscreteMeasure, nu: DiscreteMeasure, theta_fn: Callable, max_cells: int = 12) -> Optional[float]:
    """Sup over couplings of ``Σ μ_i θ(b(π_i) - x_i)`` for convex θ, or None if too big.

    Convex objective, so the sup is attained at a vertex of Π(μ,ν).
    """
    if len(mu) == 1:
        return float(theta_fn(nu.mean - mu.support[0]))
    if len(nu) == 1:
        return float(np.dot(mu.weights, theta_fn(nu.support[0] - mu.support)))
    if len(nu) == 2:
        return pi_value_two_atom(mu, nu, theta_fn, "max")
    if len(mu) * len(nu) > max_cells:
        return None
    best = -math.inf
    for P in _transport_vertices(mu.weights, nu.weights):
        bary = (P @ nu.support) / P.sum(axis=1)
        best = max(best, float(np.dot(mu.weights, theta_fn(bary - mu.support))))
    return best


# -- rearrangement by exhaustive search ------------------------------------------------


def wmr_bruteforce(mu: DiscreteMeasure, nu: DiscreteMeasure, grid: np.ndarray):
    """Exhaustive search over nondecreasing, 1-Lipschitz maps into ``grid``.

    Returns ``(T, W1)`` of the best map with ``T_*μ ≤_c ν``.
    """
    from .measures import call_function_test

    grid = np.unique(np.asarray(grid, dtype=float))
    best, bestT = math.inf, None
    x = mu.support

    def rec(k, T):
        nonlocal best, bestT
        if k == x.size:
            cand = DiscreteMeasure.from_atoms(np.array(T), mu.weights)
            holds, *_ = call_function_test(cand, nu, 1e-9)
            if holds:
                cost = float(np.dot(mu.weights, np.abs(np.array(T) - x)))
                if cost < best - 1e-12:
                    best, bestT = cost, np.array(T)
            return
        for g in grid:
            if k and (g < T[-1] - 1e-12 or g - T[-1] > x[k] - x[k - 1] + 1e-12):
                continue
            rec(k + 1, T + [g])

    rec(0, [])
    return bestT, best


# -- envelopes -------------------------------------------------------------------------


def envelope_bruteforce(grid, values) -> np.ndarray:
    """Lower convex envelope as the max over affine minorants through pairs of samples."""
    g = np.asarray(grid, dtype=float)
    v = np.asarray(values, dtype=float)
    out = np.full(g.size, -np.inf)
    out[0], out[-1] = v[0], v[-1]
    for j in range(g.size):
        for k in range(j + 1, g.size):
            slope = (v[k] - v[j]) / (g[k] - g[j])
            line = v[j] + slope * (g - g[j])
            if np.all(line <= v + 1e-12):
                out = np.maximum(out, line)
    return out


# -- exact resolution --------------------------------------------------------------------


def exact_resolution(sol: WotSolution, max_den: int = 1000) -> Optional[int]:
    """Common denominator of the kernel weights in a lower-bound solution.

    Returns None when a weight is not a verified rational with denominator
    ``<= max_den``.
    """
    lcm = 1
    for atom in sol.kernel_dist:
        for w in atom.kernel.weights:
            f = Fraction(float(w)).limit_denominator(max_den)
            if abs(float(f) - w) > 1e-9:
                return None
            lcm = lcm * f.denominator // math.gcd(lcm, f.denominator)
    return lcm


# -- random instances ----------------------------------------------------------------------


def random_measure(rng: np.random.Generator, n: int, lo: float = 0.5, hi: float = 2.0) -> DiscreteMeasure:
    pts = rng.uniform(lo, hi, n)
    return DiscreteMeasure.from_atoms(pts, rng.dirichlet(np.ones(n)), merge_tol=1e-6)


def random_rational_measure(rng: np.random.Generator, n: int, max_den: int = 12, span: int = 4) -> DiscreteMeasure:
    """Integer support, weights with a common denominator ``<= max_den``."""
    den = int(rng.integers(max(n, 1), max_den + 1))
    cuts = np.sort(rng.choice(np.arange(1, den), size=n - 1, replace=False)) if n > 1 else np.array([], dtype=int)
    counts = np.diff(np.concatenate([[0], cuts, [den]]))
    pts = rng.choice(np.arange(-span, span + 1), size=n, replace=False).astype(float)
    return DiscreteMeasure.from_atoms(pts, counts / den)


def contraction(rng: np.random.Generator, nu: DiscreteMeasure, groups: Optional[int] = None) -> DiscreteMeasure:
    """Random ν' ≤_c ν: barycenters of a random fractional grouping of ν's atoms."""
    r = groups or int(rng.integers(1, len(nu) + 2))
    share = rng.dirichlet(np.ones(r), size=len(nu))  # atom j sends share[j, g] to group g
    mass = nu.weights[:, None] * share
    gm = mass.sum(axis=0)
    keep = gm > 1e-12
    bary = (mass.T @ nu.support)[keep] / gm[keep]
    return DiscreteMeasure.from_atoms(bary, gm[keep] / gm[keep].sum(), merge_tol=1e-12)


def random_kernel_distribution(rng: np.random.Generator, xs: np.ndarray, ys: np.ndarray, atoms: int = 4) -> KernelDistribution:
    out = []
    w = rng.dirichlet(np.ones(atoms))
    for a in range(atoms):
        k = int(rng.integers(1, ys.size + 1))
        sup = np.sort(rng.choice(ys, size=k, replace=False))
        out.append(KernelAtom(float(rng.choice(xs)), DiscreteMeasure.from_atoms(sup, rng.dirichlet(np.ones(k))), float(w[a])))
    return KernelDistribution(out, renormalize=True)


# -- property suite -------------------------------------------------------------------------


@dataclass
class PropertyResult:
    name: str
    passed: bool
    worst: float
    cases: int
    tolerance: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst_residual": self.worst,
                "cases": self.cases, "tolerance": self.tolerance}


def run_oracle_suite(seed: int = 0, cases: int = 12, inject_sign_flip: bool = False) -> list[PropertyResult]:
    """Small randomized cross-checks between solvers and oracles."""
    rng = np.random.default_rng(seed)
    pp = PiecewiseLinear.positive_part()
    results = []

    # relaxed problem vs barycentric LP for convex theta
    worst, n_ok = 0.0, 0
    theta = PiecewiseLinear.sampled(lambda z: z * z, np.arange(-10.0, 10.5, 0.5))
    for _ in range(cases):
        mu = random_rational_measure(rng, int(rng.integers(1, 4)), 6)
        nu = random_rational_measure(rng, int(rng.integers(2, 4)), 6)
        lo = wot_lower_barycentric(mu, nu, theta)
        m = exact_resolution(lo, 24)
        if m is None or m > 24:
            continue
        rel = relaxed_wot(mu, nu, CostSpec.barycentric(theta), m)
        worst = max(worst, abs(rel.value - lo.value))
        n_ok += 1
    results.append(PropertyResult("relaxed_equals_barycentric", worst <= 1e-8, worst, n_ok, 1e-8))

    # every returned kernel distribution lies in Lambda
    worst_flag, count = 0.0, 0
    for _ in range(cases):
        mu, nu = random_measure(rng, int(rng.integers(1, 5))), random_measure(rng, int(rng.integers(1, 5)))
        for sol in (wot_lower_barycentric(mu, nu, pp), wot_upper_barycentric(mu, nu, pp)):
            kd = sol.kernel_dist
            ok = lambda_member(kd, mu, nu)
            worst_flag = max(worst_flag, 0.0 if ok else 1.0)
            count += 1
    results.append(PropertyResult("lambda_membership", worst_flag == 0.0, worst_flag, count, 0.0))

    # Jensen at finite support
    worst = -math.inf
    ys = np.linspace(0.0, 1.0, 6)
    for _ in range(cases * 4):
        p0 = DiscreteMeasure.from_atoms(ys, rng.dirichlet(np.ones(ys.size)))
        Q = random_kernel_distribution(rng, np.array([0.0]), ys, int(rng.integers(1, 5)))
        lhs = wasserstein(Q.intensity(), p0)
        rhs = sum(a.weight * wasserstein(a.kernel, p0) for a in Q)
        worst = max(worst, lhs - rhs)
    results.append(PropertyResult("jensen_finite_support", worst <= 1e-10, worst, cases * 4, 1e-10))

    # caplet duality closure (a sign flip in the primal makes this fail)
    worst = 0.0
    for _ in range(cases):
        mu, nu = random_measure(rng, int(rng.integers(2, 5))), random_measure(rng, int(rng.integers(2, 5)))
        lo_v = wot_lower_barycentric(mu, nu, pp).value
        up_v = wot_upper_barycentric(mu, nu, pp).value
        if inject_sign_flip:
            # primal values of the payoff -(y - x)^+ against the original certificates
            lo_v, up_v = -up_v, -lo_v
        worst = max(worst, abs(caplet_certificate(mu, nu, "lower").value - lo_v),
                    abs(caplet_certificate(mu, nu, "upper").value - up_v))
    results.append(PropertyResult("caplet_duality_gap", worst <= 1e-6, worst, cases, 1e-6))

    # upper bound equals the anticomonotone quantile formula
    worst = 0.0
    for _ in range(cases):
        mu, nu = random_measure(rng, int(rng.integers(1, 6))), random_measure(rng, int(rng.integers(1, 6)))
        worst = max(worst, abs(wot_upper_barycentric(mu, nu, pp).value - quantile_upper_value(mu, nu, pp)))
    results.append(PropertyResult("upper_quantile_formula", worst <= 1e-8, worst, cases, 1e-8))

    # convex order: both routes agree
    worst, count = 0.0, 0
    for _ in range(cases * 2):
        nu = random_measure(rng, int(rng.integers(1, 6)))
        good = contraction(rng, nu)
        bad = good.push_forward(lambda y: y + rng.choice([-1, 1]) * rng.uniform(1e-3, 0.1))
        r1, r2 = convex_order_check(good, nu), convex_order_check(bad, nu)
        worst = max(worst, 0.0 if r1.holds else 1.0, 1.0 if r2.holds else 0.0,
                    r1.coupling.martingale_residual() if r1.coupling is not None else 1.0)
        count += 2
    results.append(PropertyResult("convex_order_routes", worst <= 1e-9, worst, count, 1e-9))

    # weak monotone rearrangement structure
    worst = 0.0
    for _ in range(cases):
        mu, nu = random_measure(rng, int(rng.integers(1, 6))), random_measure(rng, int(rng.integers(1, 6)))
        w = weak_monotone_rearrangement(mu, nu)
        lo = wot_lower_barycentric(mu, nu, pp)
        below = convex_order_check(w.nu_star, nu).holds
        worst = max(worst, abs(lo.diagnostics["rearrangement_gap"]), 0.0 if below else 1.0)
    results.append(PropertyResult("rearrangement_structure", worst <= 1e-8, worst, cases, 1e-8))
    return results
