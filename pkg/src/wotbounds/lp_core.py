"""Dense revised simplex for equality-form linear programs.

Problems are ``min/max c @ x  s.t.  A @ x = b, x >= 0``. The solver runs a
two-phase method with an explicit basis inverse kept up to date by product
form (eta) updates and refactorized periodically. Pricing is Dantzig's rule
until a run of degenerate pivots is observed, after which Bland's rule takes
over, which guarantees termination.

Callers with inequalities or free variables go through :class:`LpBuilder`,
which canonicalizes to equality form and maps the solution back.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionError, LpError, SingularBasisError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class SolverConfig:
    feasibility_tol: float = 1e-9
    optimality_tol: float = 1e-9
    pivot_tol: float = 1e-11
    refactor_every: int = 64
    degeneracy_limit: int = 40
    max_iterations: int = 200_000
    dump_dir: Optional[Path] = None


CONFIG = SolverConfig()
_dump_counter = itertools.count()


def configure(**kwargs) -> SolverConfig:
    """Update the global solver configuration in place and return it."""
    for k, v in kwargs.items():
        if not hasattr(CONFIG, k):
            raise AttributeError(f"unknown solver option {k!r}")
        setattr(CONFIG, k, v)
    return CONFIG


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    sense: str = "minimize"
    name: str = "lp"

    def __post_init__(self):
        c = np.array(self.objective, dtype=float).reshape(-1)
        A = np.array(self.constraint_matrix, dtype=float)
        b = np.array(self.rhs, dtype=float).reshape(-1)
        if A.ndim == 1 and A.size == 0:
            A = A.reshape(0, c.size)
        if A.ndim != 2:
            raise DimensionError("constraint matrix must be two-dimensional")
        if A.shape[1] != c.size:
            raise DimensionError(f"A has {A.shape[1]} columns but c has {c.size} entries")
        if A.shape[0] != b.size:
            raise DimensionError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise DimensionError("LP data must be finite")
        if self.sense not in ("minimize", "maximize"):
            raise ValueError("sense must be 'minimize' or 'maximize'")
        for arr in (c, A, b):
            arr.setflags(write=False)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraint_matrix", A)
        object.__setattr__(self, "rhs", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.constraint_matrix.shape


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray
    dual: np.ndarray
    value: float
    iterations: int = 0
    bland_switches: int = 0
    basis: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def residuals(self, lp: LinearProgram) -> dict:
        """Primal feasibility, dual feasibility, complementary slackness and gap."""
        A, b, c = lp.constraint_matrix, lp.rhs, lp.objective
        x, y = self.primal, self.dual
        sign = 1.0 if lp.sense == "minimize" else -1.0
        red = sign * (c - y @ A)
        return {
            "primal": float(np.max(np.abs(A @ x - b), initial=0.0)),
            "nonneg": float(max(0.0, -np.min(x, initial=0.0))),
            "dual": float(max(0.0, -np.min(red, initial=0.0))),
            "slackness": float(np.max(np.abs(red * x), initial=0.0)),
            "gap": float(abs(c @ x - b @ y)),
        }


class _Simplex:
    """Working state of one solve. Not shared between problems."""

    def __init__(self, A: np.ndarray, b: np.ndarray, cfg: SolverConfig):
        self.cfg = cfg
        m, n = A.shape
        self.m, self.n = m, n
        # every row gets an artificial column; b is made nonnegative first
        flip = b < 0
        self.row_sign = np.where(flip, -1.0, 1.0)
        A = A * self.row_sign[:, None]
        b = b * self.row_sign
        self.A = np.hstack([A, np.eye(m)])
        self.b = b
        self.basis = np.arange(n, n + m)
        self.Binv = np.eye(m)
        self.xB = b.copy()
        self.allowed = np.ones(n + m, dtype=bool)
        self.iterations = 0
        self.bland_switches = 0
        self._since_refactor = 0

    def refactor(self):
        B = self.A[:, self.basis]
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise SingularBasisError("basis matrix is singular") from exc
        if not np.all(np.isfinite(Binv)) or np.linalg.norm(Binv @ B - np.eye(self.m), np.inf) > 1e-6:
            raise SingularBasisError("basis matrix is numerically singular")
        self.Binv = Binv
        self.xB = Binv @ self.b
        self.xB[np.abs(self.xB) < self.cfg.feasibility_tol * 1e-3] = 0.0
        self._since_refactor = 0

    def pivot(self, r: int, j: int, u: np.ndarray):
        ur = u[r]
        if abs(ur) < self.cfg.pivot_tol:
            raise SingularBasisError(f"pivot element {ur:.3e} below tolerance")
        theta = self.xB[r] / ur
        self.xB -= theta * u
        self.xB[r] = theta
        row = self.Binv[r] / ur
        self.Binv -= np.outer(u, row)
        self.Binv[r] = row
        self.basis[r] = j
        self._since_refactor += 1
        if self._since_refactor >= self.cfg.refactor_every:
            self.refactor()

    def run(self, cost: np.ndarray) -> str:
        """Optimize ``cost`` from the current feasible basis."""
        cfg = self.cfg
        bland = False
        degenerate_run = 0
        scale = max(1.0, float(np.max(np.abs(cost), initial=0.0)))
        opt_tol = cfg.optimality_tol * scale
        while True:
            if self.iterations >= cfg.max_iterations:
                raise LpError(f"iteration limit {cfg.max_iterations} reached")
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.A
            d[self.basis] = 0.0
            cand = np.flatnonzero((d < -opt_tol) & self.allowed)
            if cand.size == 0:
                return OPTIMAL
            j = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
            u = self.Binv @ self.A[:, j]
            # entries tiny relative to the column do not block; they only wreck the eta file
            pos = u > max(cfg.pivot_tol, 1e-9 * float(np.abs(u).max()))
            if not np.any(pos):
                if self._since_refactor:
                    self.refactor()
                    u = self.Binv @ self.A[:, j]
                    pos = u > cfg.pivot_tol
                if not np.any(pos):
                    return UNBOUNDED
            ratios = np.full(self.m, np.inf)
            ratios[pos] = np.maximum(self.xB[pos], 0.0) / u[pos]
            best = ratios.min()
            if bland:
                ties = np.flatnonzero(ratios <= best + cfg.feasibility_tol * 1e-3)
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                # Harris pass: largest pivot among rows blocking within the feasibility tolerance
                relaxed = np.full(self.m, np.inf)
                relaxed[pos] = (np.maximum(self.xB[pos], 0.0) + cfg.feasibility_tol) / u[pos]
                ties = np.flatnonzero(ratios <= relaxed.min())
                r = int(ties[np.argmax(u[ties])])
            if best <= cfg.feasibility_tol:
                degenerate_run += 1
                if not bland and degenerate_run > cfg.degeneracy_limit:
                    bland = True
                    self.bland_switches += 1
            else:
                degenerate_run = 0
            self.pivot(r, j, u)
            self.iterations += 1

    def expel_artificials(self):
        """Pivot basic artificials out where possible; pin the rest at zero."""
        n = self.n
        for r in range(self.m):
            if self.basis[r] < n:
                continue
            row = self.Binv[r] @ self.A[:, :n]
            nonbasic = np.ones(n, dtype=bool)
            nonbasic[self.basis[self.basis < n]] = False
            cand = np.flatnonzero(nonbasic & (np.abs(row) > 1e-7))
            if cand.size:
                j = int(cand[np.argmax(np.abs(row[cand]))])
                self.pivot(r, j, self.Binv @ self.A[:, j])
        self.allowed[n:] = False


def solve_lp(lp: LinearProgram, config: Optional[SolverConfig] = None) -> LpSolution:
    """Solve ``lp`` and return primal/dual certificates.

    Raises :class:`SingularBasisError` if a basis cannot be inverted; no
    perturbation is applied.
    """
    cfg = config or CONFIG
    if cfg.dump_dir is not None:
        dump_lp(lp, Path(cfg.dump_dir) / f"{next(_dump_counter):05d}_{lp.name}.lp.txt")
    A, b = lp.constraint_matrix, lp.rhs
    m, n = A.shape
    sign = 1.0 if lp.sense == "minimize" else -1.0
    c = sign * lp.objective

    if m == 0:
        if np.any(c < -cfg.optimality_tol):
            return LpSolution(UNBOUNDED, np.zeros(n), np.zeros(0), sign * -np.inf)
        return LpSolution(OPTIMAL, np.zeros(n), np.zeros(0), 0.0)

    sx = _Simplex(A, b, cfg)
    phase1 = np.concatenate([np.zeros(n), np.ones(m)])
    sx.run(phase1)
    sx.refactor()
    infeas = float(sx.xB[sx.basis >= n].sum())
    if infeas > cfg.feasibility_tol * max(1.0, float(np.abs(b).max())):
        return LpSolution(INFEASIBLE, np.zeros(n), np.zeros(m), np.nan, sx.iterations, sx.bland_switches)
    sx.expel_artificials()
    sx.refactor()

    full_cost = np.concatenate([c, np.zeros(m)])
    status = sx.run(full_cost)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, np.zeros(n), np.zeros(m), sign * -np.inf, sx.iterations, sx.bland_switches)
    sx.refactor()

    x = np.zeros(n + m)
    x[sx.basis] = np.maximum(sx.xB, 0.0)
    primal = x[:n]
    dual = (full_cost[sx.basis] @ sx.Binv) * sx.row_sign
    value = float(lp.objective @ primal)
    sol = LpSolution(
        OPTIMAL,
        primal,
        sign * dual,
        value,
        sx.iterations,
        sx.bland_switches,
        basis=sx.basis.copy(),
    )
    sol.stats = sol.residuals(lp)
    if sol.stats["primal"] > 1e-7:
        log.warning("LP %s: primal residual %.2e after final refactorization", lp.name, sol.stats["primal"])
    return sol


# -- canonicalization -----------------------------------------------------------


class LpBuilder:
    """Assemble an LP with equality/inequality rows and free variables.

    Variables are declared in blocks; ``A_ub x <= b_ub`` rows receive slack
    columns and free variables are split into positive and negative parts.
    """

    def __init__(self, sense: str = "minimize", name: str = "lp"):
        self.sense = sense
        self.name = name
        self._blocks: list[tuple[str, int, bool]] = []
        self._cost: list[np.ndarray] = []
        self._eq_rows: list[tuple[dict, float]] = []
        self._ub_rows: list[tuple[dict, float]] = []

    def add_variables(self, name: str, size: int, cost=0.0, free: bool = False) -> str:
        if any(b[0] == name for b in self._blocks):
            raise ValueError(f"duplicate block {name}")
        self._blocks.append((name, int(size), free))
        self._cost.append(np.broadcast_to(np.asarray(cost, dtype=float), (int(size),)).copy())
        return name

    def _offsets(self):
        off, out = 0, {}
        for name, size, free in self._blocks:
            out[name] = (off, size, free)
            off += size
        return out, off

    def add_eq(self, coeffs: dict, rhs: float):
        self._eq_rows.append((coeffs, float(rhs)))

    def add_ub(self, coeffs: dict, rhs: float):
        self._ub_rows.append((coeffs, float(rhs)))

    def add_eq_block(self, coeffs: dict, rhs):
        """Add many equality rows at once; ``coeffs[name]`` is a (rows, size) matrix."""
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        for i in range(rhs.size):
            self._eq_rows.append(({k: np.asarray(v)[i] for k, v in coeffs.items()}, float(rhs[i])))

    def add_ub_block(self, coeffs: dict, rhs):
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        for i in range(rhs.size):
            self._ub_rows.append(({k: np.asarray(v)[i] for k, v in coeffs.items()}, float(rhs[i])))

    def build(self) -> "CanonicalLp":
        offsets, nvar = self._offsets()
        free_idx = np.concatenate(
            [np.arange(o, o + s) for (o, s, f) in offsets.values() if f] or [np.zeros(0, dtype=int)]
        ).astype(int)
        n_free = free_idx.size
        n_ub = len(self._ub_rows)
        ncol = nvar + n_free + n_ub
        rows = self._eq_rows + self._ub_rows
        A = np.zeros((len(rows), ncol))
        b = np.zeros(len(rows))
        for i, (coeffs, rhs) in enumerate(rows):
            for name, vec in coeffs.items():
                o, s, _ = offsets[name]
                A[i, o:o + s] += np.broadcast_to(np.asarray(vec, dtype=float), (s,))
            b[i] = rhs
        if n_free:
            A[:, nvar:nvar + n_free] = -A[:, free_idx]
        for k in range(n_ub):
            A[len(self._eq_rows) + k, nvar + n_free + k] = 1.0
        c = np.zeros(ncol)
        c[:nvar] = np.concatenate(self._cost) if self._cost else np.zeros(0)
        if n_free:
            c[nvar:nvar + n_free] = -c[free_idx]
        lp = LinearProgram(c, A, b, self.sense, self.name)
        return CanonicalLp(lp, offsets, nvar, free_idx, len(self._eq_rows), n_ub)


@dataclass
class CanonicalLp:
    lp: LinearProgram
    offsets: dict
    n_vars: int
    free_idx: np.ndarray
    n_eq: int
    n_ub: int

    def solve(self, config: Optional[SolverConfig] = None) -> "BuiltSolution":
        sol = solve_lp(self.lp, config)
        x = sol.primal[: self.n_vars].copy()
        if self.free_idx.size and sol.optimal:
            x[self.free_idx] -= sol.primal[self.n_vars:self.n_vars + self.free_idx.size]
        values = {name: x[o:o + s] for name, (o, s, _) in self.offsets.items()}
        return BuiltSolution(sol, values, sol.dual[: self.n_eq], sol.dual[self.n_eq:])


@dataclass
class BuiltSolution:
    raw: LpSolution
    values: dict
    eq_duals: np.ndarray
    ub_duals: np.ndarray

    @property
    def status(self) -> str:
        return self.raw.status

    @property
    def value(self) -> float:
        return self.raw.value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


def dump_lp(lp: LinearProgram, path) -> Path:
    """Write ``lp`` as plain text: header, objective row, then ``A | b`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m, n = lp.shape
    fmt = lambda v: " ".join(repr(float(t)) for t in v)  # noqa: E731
    lines = [f"# {lp.name} {lp.sense} rows={m} cols={n}", fmt(lp.objective)]
    lines += [f"{fmt(row)} | {float(rhs)!r}" for row, rhs in zip(lp.constraint_matrix, lp.rhs)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_lp(path) -> LinearProgram:
    """Inverse of :func:`dump_lp`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0].split()
    name, sense = head[1], head[2]
    c = np.array([float(t) for t in lines[1].split()])
    rows, rhs = [], []
    for ln in lines[2:]:
        left, right = ln.split("|")
        rows.append([float(t) for t in left.split()])
        rhs.append(float(right))
    A = np.array(rows) if rows else np.zeros((0, c.size))
    return LinearProgram(c, A, np.array(rhs), sense, name)


def with_config(**overrides) -> SolverConfig:
    return replace(CONFIG, **overrides)
