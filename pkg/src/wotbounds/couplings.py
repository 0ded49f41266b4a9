"""Couplings on finite product supports and their lifts to kernel distributions.

A :class:`Coupling` is a joint probability matrix. A
:class:`KernelDistribution` is a finite distribution over ``(x, kernel)``
pairs; the embedding :func:`embed_J` and the intensity map
:func:`intensity_hat` move between the two. Also home to the transport LP
shared by every Π-constrained problem and to the martingale coupling LP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import lp_core
from .errors import ConvexOrderError, InvalidMeasureError, LpError
from .measures import MERGE_TOL, DiscreteMeasure, measure_distance_sup, wasserstein

MARGINAL_TOL = 1e-10
MARTINGALE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Coupling:
    x_support: np.ndarray
    y_support: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        xs = np.array(self.x_support, dtype=float).reshape(-1)
        ys = np.array(self.y_support, dtype=float).reshape(-1)
        P = np.array(self.matrix, dtype=float).reshape(xs.size, ys.size)
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise InvalidMeasureError("coupling supports must be strictly increasing")
        if np.any(P < -1e-12):
            raise InvalidMeasureError("coupling has negative mass")
        P = np.maximum(P, 0.0)
        if abs(P.sum() - 1.0) > 1e-9:
            raise InvalidMeasureError(f"coupling mass {P.sum():.12g} != 1")
        for a in (xs, ys, P):
            a.setflags(write=False)
        object.__setattr__(self, "x_support", xs)
        object.__setattr__(self, "y_support", ys)
        object.__setattr__(self, "matrix", P)

    @property
    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def first_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_atoms(self.x_support, self.row_sums, drop_below=1e-15)

    def second_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_atoms(self.y_support, self.col_sums, drop_below=1e-15)

    def check_marginals(self, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = MARGINAL_TOL) -> bool:
        return (
            measure_distance_sup(self.first_marginal(), mu) <= tol
            and measure_distance_sup(self.second_marginal(), nu) <= tol
        )

    def expect(self, cost: np.ndarray) -> float:
        return float(np.sum(self.matrix * np.asarray(cost, dtype=float)))

    def martingale_residual(self) -> float:
        """Largest ``|Σ_z (z - y) χ(y, z)|`` over rows."""
        r = self.matrix @ self.y_support - self.row_sums * self.x_support
        return float(np.max(np.abs(r), initial=0.0))

    def to_dict(self) -> dict:
        return {
            "x_support": self.x_support.tolist(),
            "y_support": self.y_support.tolist(),
            "matrix": self.matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Coupling":
        return cls(d["x_support"], d["y_support"], d["matrix"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def product(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> "Coupling":
        return cls(mu.support, nu.support, np.outer(mu.weights, nu.weights))

    @classmethod
    def identity(cls, mu: DiscreteMeasure) -> "Coupling":
        return cls(mu.support, mu.support, np.diag(mu.weights))


@dataclass(frozen=True, eq=False)
class KernelAtom:
    x: float
    kernel: DiscreteMeasure
    weight: float

    def to_dict(self) -> dict:
        return {"x": self.x, "kernel": self.kernel.to_dict(), "weight": self.weight}


def _same_kernel(p: DiscreteMeasure, q: DiscreteMeasure, tol: float = 1e-12) -> bool:
    return len(p) == len(q) and np.allclose(p.support, q.support, atol=MERGE_TOL, rtol=0) and np.allclose(
        p.weights, q.weights, atol=tol, rtol=0
    )


class KernelDistribution:
    """Finite distribution over ``(x, kernel)`` pairs.

    Atoms with the same ``x`` and equal kernels (within ``1e-12`` per weight)
    are merged by adding their weights.
    """

    def __init__(self, atoms: Iterable[KernelAtom | tuple], renormalize: bool = False):
        merged: list[KernelAtom] = []
        for a in atoms:
            if not isinstance(a, KernelAtom):
                a = KernelAtom(float(a[0]), a[1], float(a[2]))
            if a.weight < 0:
                raise InvalidMeasureError("kernel atom weight must be nonnegative")
            if a.weight <= 1e-15:
                continue
            for k, b in enumerate(merged):
                if abs(b.x - a.x) < MERGE_TOL and _same_kernel(b.kernel, a.kernel):
                    merged[k] = KernelAtom(b.x, b.kernel, b.weight + a.weight)
                    break
            else:
                merged.append(a)
        if not merged:
            raise InvalidMeasureError("kernel distribution has no mass")
        total = sum(a.weight for a in merged)
        if renormalize:
            merged = [KernelAtom(a.x, a.kernel, a.weight / total) for a in merged]
        elif abs(total - 1.0) > 1e-9:
            raise InvalidMeasureError(f"kernel weights sum to {total:.12g}")
        merged.sort(key=lambda a: (a.x, a.kernel.mean))
        self.atoms: tuple[KernelAtom, ...] = tuple(merged)

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    def __repr__(self) -> str:
        return f"KernelDistribution({len(self)} atoms)"

    @property
    def xs(self) -> np.ndarray:
        return np.array([a.x for a in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms])

    def x_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_atoms(self.xs, self.weights)

    def intensity(self) -> DiscreteMeasure:
        """``I(proj_2 P)``: the mixture ``Σ weight · kernel``."""
        pts = np.concatenate([a.kernel.support for a in self.atoms])
        wts = np.concatenate([a.weight * a.kernel.weights for a in self.atoms])
        return DiscreteMeasure.from_atoms(pts, wts, drop_below=1e-16)

    def expect(self, cost) -> float:
        """``Σ weight · C(x, kernel)`` for a callable ``cost(x, kernel)``."""
        return float(sum(a.weight * cost(a.x, a.kernel) for a in self.atoms))

    def barycenters(self) -> np.ndarray:
        return np.array([a.kernel.mean for a in self.atoms])

    def to_list(self) -> list:
        return [a.to_dict() for a in self.atoms]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "KernelDistribution":
        return cls(KernelAtom(float(d["x"]), DiscreteMeasure.from_dict(d["kernel"]), float(d["weight"])) for d in items)


# -- operations ----------------------------------------------------------------


def disintegrate(c: Coupling) -> list[tuple[float, DiscreteMeasure, float]]:
    out = []
    for x, row, w in zip(c.x_support, c.matrix, c.row_sums):
        if w <= 1e-15:
            continue
        keep = row > 0
        out.append((float(x), DiscreteMeasure.from_atoms(c.y_support[keep], row[keep] / w, drop_below=1e-16), float(w)))
    return out


def _sweep(mu: DiscreteMeasure, nu: DiscreteMeasure, reverse: bool) -> Coupling:
    """Two-pointer mass matching; the x-atom is exhausted before y advances."""
    n, k = len(mu), len(nu)
    P = np.zeros((n, k))
    order = list(range(k - 1, -1, -1)) if reverse else list(range(k))
    rx = mu.weights.astype(float).copy()
    ry = nu.weights.astype(float).copy()
    i, jj = 0, 0
    while i < n and jj < k:
        j = order[jj]
        mass = min(rx[i], ry[j])
        P[i, j] += mass
        rx[i] -= mass
        ry[j] -= mass
        if rx[i] <= 1e-15:
            i += 1
            if ry[j] <= 1e-15:
                jj += 1
        else:
            jj += 1
    # float residue from the sweep lands on the last visited cell
    P *= 1.0 / P.sum()
    return Coupling(mu.support, nu.support, P)


def comonotone(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    return _sweep(mu, nu, reverse=False)


def anticomonotone(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    return _sweep(mu, nu, reverse=True)


def embed_J(c: Coupling) -> KernelDistribution:
    return KernelDistribution(KernelAtom(x, p, w) for x, p, w in disintegrate(c))


def intensity_hat(P: KernelDistribution) -> Coupling:
    xs = np.unique(P.xs)
    ys = np.unique(np.concatenate([a.kernel.support for a in P]))
    M = np.zeros((xs.size, ys.size))
    for a in P:
        i = int(np.searchsorted(xs, a.x))
        j = np.searchsorted(ys, a.kernel.support)
        np.add.at(M[i], j, a.weight * a.kernel.weights)
    return Coupling(xs, ys, M)


def lambda_member(P: KernelDistribution, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = MARGINAL_TOL) -> bool:
    return measure_distance_sup(P.x_marginal(), mu) <= tol and measure_distance_sup(P.intensity(), nu) <= tol


# -- transport LPs --------------------------------------------------------------


def transport_lp(a: np.ndarray, b: np.ndarray, cost: np.ndarray, sense: str = "minimize", name: str = "transport"):
    """Solve the Kantorovich LP with marginals ``a`` (rows) and ``b`` (cols).

    Returns ``(plan, value, solution)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n, k = cost.shape
    A = np.vstack([np.kron(np.eye(n), np.ones(k)), np.kron(np.ones(n), np.eye(k))])
    lp = lp_core.LinearProgram(cost.ravel(), A, np.concatenate([a, b]), sense, name)
    sol = lp_core.solve_lp(lp)
    if not sol.optimal:
        raise LpError(f"transport LP {name} returned {sol.status}")
    return sol.primal.reshape(n, k), sol.value, sol


def adapted_distance(c1: Coupling | KernelDistribution, c2: Coupling | KernelDistribution, r: float = 1.0) -> float:
    """Adapted Wasserstein distance via a nested LP.

    Couplings are compared through their J-images; kernel distributions are
    used as given, so this also measures distances inside Λ(μ,ν).
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    P1 = embed_J(c1) if isinstance(c1, Coupling) else c1
    P2 = embed_J(c2) if isinstance(c2, Coupling) else c2
    D = np.empty((len(P1), len(P2)))
    for i, a in enumerate(P1):
        for j, b in enumerate(P2):
            D[i, j] = abs(a.x - b.x) ** r + wasserstein(a.kernel, b.kernel, r) ** r
    _, value, _ = transport_lp(P1.weights, P2.weights, D, name="adapted_outer")
    return max(value, 0.0) ** (1.0 / r)


def martingale_lp(m1: DiscreteMeasure, m2: DiscreteMeasure) -> tuple[Optional[Coupling], Optional[float]]:
    """Feasibility LP for a martingale coupling of ``m1`` into ``m2``.

    Returns ``(coupling, residual)`` or ``(None, None)`` when infeasible.
    """
    n, k = len(m1), len(m2)
    y, z = m1.support, m2.support
    A_pi = np.vstack([np.kron(np.eye(n), np.ones(k)), np.kron(np.ones(n), np.eye(k))])
    A_mart = np.kron(np.eye(n), np.ones(k)) * (z[None, :].repeat(n, 0).ravel() - np.repeat(y, k))[None, :]
    A = np.vstack([A_pi, A_mart])
    b = np.concatenate([m1.weights, m2.weights, np.zeros(n)])
    lp = lp_core.LinearProgram(np.zeros(n * k), A, b, "minimize", "martingale")
    sol = lp_core.solve_lp(lp)
    if not sol.optimal:
        return None, None
    M = sol.primal.reshape(n, k)
    coupling = Coupling(y, z, M / M.sum())
    return coupling, coupling.martingale_residual()


def martingale_coupling(nu_prime: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    coupling, residual = martingale_lp(nu_prime, nu)
    if coupling is None:
        from .measures import call_function_test

        _, reason, _, _ = call_function_test(nu_prime, nu)
        raise ConvexOrderError(
            f"no martingale coupling exists: convex order fails ({reason or 'LP infeasibility'})",
            reason=reason or "LP infeasibility",
        )
    if residual > MARTINGALE_TOL:
        raise ConvexOrderError(f"martingale residual {residual:.2e} exceeds tolerance", reason="residual")
    return coupling
