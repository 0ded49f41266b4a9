"""Fixed-income layer: quotes → marginals → certified bounds → money prices.

State variables are expressed in T₂-bond units: ``X₁ = 1/p(T₁,T₂)``,
``Y₁ = p(T₁,T₃)/p(T₁,T₂)`` and ``Y₂ = p(T₂,T₃)``. Call quotes on the two
bonds pin down the laws μ of X₁ and ν of Y₂ under the T₂-forward measure.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .couplings import Coupling, KernelAtom, KernelDistribution, transport_lp
from .dual_certificates import (
    CapletCertificate,
    DualTriplet,
    caplet_certificate,
    general_dual,
    verification_grid,
    verify_hedge,
)
from .errors import ArbitrageError, CertificateError, InvalidMeasureError
from .measures import DiscreteMeasure
from .theta import PiecewiseLinear
from .wot_solvers import (
    CostSpec,
    WotSolution,
    _barycentric_solution,
    barycentric_lp,
    candidate_grid,
    default_resolution,
    relaxed_wot,
    weak_monotone_rearrangement,
    wot_lower_barycentric,
    wot_upper_barycentric,
)

ARB_TOL = 1e-10
REPRICE_TOL = 1e-8
CERT_VALUE_TOL = 1e-6

_PAIR_ALIASES = {
    "T1T2": "T1-T2",
    "T2T3": "T2-T3",
}


def _norm_pair(s: str) -> str:
    key = "".join(ch for ch in s.upper() if ch.isalnum())
    if key in ("T2", "0T2"):
        return "T2"
    if key in ("T3", "0T3"):
        return "T3"
    return _PAIR_ALIASES.get(key, s)


# -- quotes -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarketQuotes:
    """Time-0 bond prices and call curves ``C(T₁,T₂,K)``, ``C(T₂,T₃,K)``."""

    p0_T2: float
    p0_T3: float
    call_T1_on_T2: tuple
    call_T2_on_T3: tuple

    def __post_init__(self):
        if not (self.p0_T2 > 0 and self.p0_T3 > 0):
            raise InvalidMeasureError("bond prices must be positive")
        for name in ("call_T1_on_T2", "call_T2_on_T3"):
            rows = tuple((float(k), float(p)) for k, p in getattr(self, name))
            object.__setattr__(self, name, rows)
            _check_curve(rows, name)

    @property
    def forward_T3(self) -> float:
        """``E[Y₂] = p(0,T₃)/p(0,T₂)``."""
        return self.p0_T3 / self.p0_T2

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instrument", "maturity_pair", "strike", "price"])
        w.writerow(["bond", "T2", "", repr(self.p0_T2)])
        w.writerow(["bond", "T3", "", repr(self.p0_T3)])
        for k, p in self.call_T1_on_T2:
            w.writerow(["call", "T1-T2", repr(k), repr(p)])
        for k, p in self.call_T2_on_T3:
            w.writerow(["call", "T2-T3", repr(k), repr(p)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MarketQuotes":
        reader = csv.DictReader(io.StringIO(text))
        need = {"instrument", "maturity_pair", "strike", "price"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise InvalidMeasureError(f"quote CSV needs columns {sorted(need)}")
        bonds, c12, c23 = {}, [], []
        for line, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k}
            inst = row["instrument"].lower()
            pair = _norm_pair(row["maturity_pair"])
            try:
                price = float(row["price"])
                strike = float(row["strike"]) if row["strike"] else None
            except ValueError as exc:
                raise InvalidMeasureError(f"line {line}: {exc}") from exc
            if inst == "bond":
                bonds[pair] = price
            elif inst == "call":
                if strike is None:
                    raise InvalidMeasureError(f"line {line}: call quote without strike")
                if pair == "T1-T2":
                    c12.append((strike, price))
                elif pair == "T2-T3":
                    c23.append((strike, price))
                else:
                    raise InvalidMeasureError(f"line {line}: unknown maturity pair {row['maturity_pair']!r}")
            else:
                raise InvalidMeasureError(f"line {line}: unknown instrument {row['instrument']!r}")
        if "T2" not in bonds or "T3" not in bonds:
            raise InvalidMeasureError("quote file must contain bond prices for T2 and T3")
        return cls(bonds["T2"], bonds["T3"], tuple(sorted(c12)), tuple(sorted(c23)))

    @classmethod
    def load(cls, path) -> "MarketQuotes":
        return cls.from_csv(Path(path).read_text())


def _check_curve(rows: Sequence[tuple], name: str):
    if not rows:
        return
    K = np.array([r[0] for r in rows])
    P = np.array([r[1] for r in rows])
    if np.any(np.diff(K) <= 0):
        raise InvalidMeasureError(f"{name}: strikes must be strictly increasing")
    if np.any(K < 0):
        raise InvalidMeasureError(f"{name}: strikes must be nonnegative")
    if np.any(P < -ARB_TOL):
        bad = int(np.argmin(P))
        raise ArbitrageError(f"{name}: negative price at strike {K[bad]}", strikes=(float(K[bad]),))
    _check_call_shape(K, P, name)


def _check_call_shape(K: np.ndarray, P: np.ndarray, name: str, scale: float = 1.0):
    if K.size < 2:
        return
    s = np.diff(P) / np.diff(K)
    tol = ARB_TOL * max(1.0, scale)
    for i in np.flatnonzero(s > tol):
        raise ArbitrageError(
            f"{name}: call price increases between strikes {K[i]} and {K[i + 1]}",
            strikes=(float(K[i]), float(K[i + 1])),
        )
    for i in np.flatnonzero(np.diff(s) < -tol):
        triple = (float(K[i]), float(K[i + 1]), float(K[i + 2]))
        raise ArbitrageError(f"{name}: call curve not convex at strikes {triple}", strikes=triple)


# -- extraction ---------------------------------------------------------------------


@dataclass
class Extraction:
    measure: DiscreteMeasure
    max_reprice_error: float
    tail_masses: dict
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "measure": self.measure.to_dict(),
            "max_reprice_error": self.max_reprice_error,
            "tail_masses": self.tail_masses,
            "flags": list(self.flags),
        }


def _butterflies(K: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interior masses ``slope_i - slope_{i-1}`` at ``K[1:-1]`` and the slopes."""
    s = np.diff(P) / np.diff(K)
    return np.diff(s), s


def _raise_negative(masses, K, name):
    for i in np.flatnonzero(masses < -ARB_TOL):
        triple = (float(K[i]), float(K[i + 1]), float(K[i + 2]))
        raise ArbitrageError(f"{name}: negative butterfly at strikes {triple}", strikes=triple)


def _finish(points, masses, name, reprice) -> tuple[DiscreteMeasure, float]:
    pts = np.asarray(points, dtype=float)
    w = np.maximum(np.asarray(masses, dtype=float), 0.0)
    keep = w > 1e-14
    total = w[keep].sum()
    if abs(total - 1.0) > 1e-8:
        raise ArbitrageError(f"{name}: extracted masses sum to {total:.12g}")
    m = DiscreteMeasure.from_atoms(pts[keep], w[keep] / total, renormalize_tol=1e-8)
    err = reprice(m)
    if err > REPRICE_TOL:
        raise ArbitrageError(f"{name}: extracted measure reprices quotes only to {err:.3e}")
    return m, err


def extract_nu(q: MarketQuotes, *, detail: bool = False):
    """Law ν of ``Y₂ = p(T₂,T₃)`` from ``C(T₂,T₃,K)/p(0,T₂) = E[(Y₂ - K)^+]``.

    Interior atoms come from slope differences of the call curve (exact on
    nonuniform grids). Mass beyond the last strike sits at the single point
    that reprices the last call; mass below the first strike sits at the
    point that matches the forward ``p(0,T₃)/p(0,T₂)``.
    """
    if not q.call_T2_on_T3:
        raise InvalidMeasureError("no C(T2,T3,K) quotes")
    K = np.array([r[0] for r in q.call_T2_on_T3])
    P = np.array([r[1] for r in q.call_T2_on_T3]) / q.p0_T2
    fwd = q.forward_T3
    name = "C(T2,T3,K)"
    flags = []
    if K.size == 1:
        # one call plus the forward: two-point law is not unique; use a Dirac if consistent
        if abs(max(fwd - K[0], 0.0) - P[0]) > REPRICE_TOL:
            raise ArbitrageError(f"{name}: a single strike cannot be extracted without a Dirac fit", strikes=(float(K[0]),))
        m = DiscreteMeasure.dirac(fwd)
        ext = Extraction(m, abs(max(fwd - K[0], 0.0) - P[0]), {"lower": 0.0, "upper": 0.0}, ["single_strike_dirac"])
        return ext if detail else m
    inner, s = _butterflies(K, P)
    _raise_negative(inner, K, name)
    if s[0] < -1.0 - ARB_TOL:
        raise ArbitrageError(f"{name}: call slope below -1 between {K[0]} and {K[1]}", strikes=(float(K[0]), float(K[1])))
    upper_mass = -s[-1]
    lower_mass = 1.0 + s[0]
    points, masses = list(K[1:-1]), list(inner)
    # upper tail: mass at >= K_N with E[(Y - K_N)^+] = P_N
    if upper_mass > ARB_TOL:
        points.append(K[-1] + P[-1] / upper_mass)
        masses.append(upper_mass)
    elif P[-1] > REPRICE_TOL:
        raise ArbitrageError(f"{name}: positive call price at {K[-1]} with no mass above it", strikes=(float(K[-1]),))
    # lower tail: mass at <= K_0 with E[(K_0 - Y)^+] fixed by the forward
    put0 = P[0] + K[0] - fwd
    if lower_mass > ARB_TOL:
        if put0 < -REPRICE_TOL:
            raise ArbitrageError(f"{name}: forward {fwd:.10g} inconsistent with call at {K[0]}", strikes=(float(K[0]),))
        points.append(K[0] - max(put0, 0.0) / lower_mass)
        masses.append(lower_mass)
        if put0 > REPRICE_TOL:
            flags.append("lower_tail_below_first_strike")
    elif abs(put0) > REPRICE_TOL:
        raise ArbitrageError(f"{name}: forward {fwd:.10g} inconsistent with call curve at {K[0]}", strikes=(float(K[0]),))
    if upper_mass > ARB_TOL and P[-1] > REPRICE_TOL:
        flags.append("upper_tail_above_last_strike")

    def reprice(m: DiscreteMeasure) -> float:
        return float(max(np.max(np.abs(m.call(K) - P)), abs(m.mean - fwd)))

    m, err = _finish(points, masses, name, reprice)
    ext = Extraction(m, err, {"lower": float(lower_mass), "upper": float(upper_mass)}, flags)
    return ext if detail else m


def extract_mu(q: MarketQuotes, *, detail: bool = False):
    """Law μ of ``X₁ = 1/p(T₁,T₂)`` from ``C(T₁,T₂,K)/p(0,T₂) = E[(1 - K X₁)^+]``.

    With ``k = 1/K`` the quotes become put prices ``G(k) = k·C(1/k)/p(0,T₂)
    = E[(k - X₁)^+]``, which are differenced directly on the transformed
    (nonuniform) knots. Mass below the first knot sits at the point that
    reprices the first put; mass above the last knot is placed on it.
    """
    rows = [(k, p) for k, p in q.call_T1_on_T2 if k > 0]
    if not rows:
        raise InvalidMeasureError("no positive-strike C(T1,T2,K) quotes")
    Kq = np.array([r[0] for r in rows])
    Cq = np.array([r[1] for r in rows]) / q.p0_T2
    k = (1.0 / Kq)[::-1]
    G = (k * Cq[::-1])
    name = "C(T1,T2,K)"
    flags = []
    if k.size == 1:
        raise InvalidMeasureError(f"{name}: need at least two positive strikes")
    s = np.diff(G) / np.diff(k)
    for i in np.flatnonzero(s < -ARB_TOL):
        raise ArbitrageError(f"{name}: transformed put decreases between k={k[i]} and k={k[i + 1]}",
                             strikes=(float(Kq[::-1][i]), float(Kq[::-1][i + 1])))
    if s[-1] > 1.0 + ARB_TOL:
        raise ArbitrageError(f"{name}: transformed put slope above 1 near strike {Kq[0]}", strikes=(float(Kq[0]),))
    inner = np.diff(s)
    for i in np.flatnonzero(inner < -ARB_TOL):
        triple = tuple(float(1.0 / t) for t in (k[i + 2], k[i + 1], k[i]))
        raise ArbitrageError(f"{name}: negative butterfly at strikes {triple}", strikes=triple)
    lower_mass = s[0]
    upper_mass = 1.0 - s[-1]
    points, masses = list(k[1:-1]), list(inner)
    if lower_mass > ARB_TOL:
        points.append(k[0] - G[0] / lower_mass)
        masses.append(lower_mass)
        if G[0] > REPRICE_TOL:
            flags.append("lower_tail_below_first_knot")
    elif G[0] > REPRICE_TOL:
        raise ArbitrageError(f"{name}: positive put value at k={k[0]} with no mass below", strikes=(float(Kq[-1]),))
    if upper_mass > ARB_TOL:
        points.append(k[-1])
        masses.append(upper_mass)
        flags.append("upper_tail_on_last_knot")
    if points and min(points) <= 0:
        raise ArbitrageError(f"{name}: extracted X1 atom at {min(points):.6g} is not positive")

    def reprice(m: DiscreteMeasure) -> float:
        model = np.array([m.expect(lambda x, K=K: np.maximum(1.0 - K * x, 0.0)) for K in Kq])
        return float(np.max(np.abs(model - Cq)))

    m, err = _finish(points, masses, name, reprice)
    ext = Extraction(m, err, {"lower": float(lower_mass), "upper": float(upper_mass)}, flags)
    return ext if detail else m


def synthetic_quotes(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    strikes_T1T2: Sequence[float],
    strikes_T2T3: Sequence[float],
    p0_T2: float = 0.95,
) -> MarketQuotes:
    """Quotes generated by pricing calls under given marginals."""
    c12 = tuple((float(K), p0_T2 * mu.expect(lambda x, K=K: np.maximum(1.0 - K * x, 0.0))) for K in strikes_T1T2)
    c23 = tuple((float(K), p0_T2 * float(nu.call(K))) for K in strikes_T2T3)
    return MarketQuotes(p0_T2, p0_T2 * nu.mean, c12, c23)


# -- payoffs -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """Payoff ``Φ(b₂, b₃)`` at T₁ in money units, with ``b₂ = p(T₁,T₂)``, ``b₃ = p(T₁,T₃)``.

    Either the caplet family ``(b₃ - K)^+``, a sampled grid with bilinear
    interpolation, or an arbitrary vectorized callable.
    """

    kind: str  # caplet | grid | callable
    strike: Optional[float] = None
    b2: Optional[np.ndarray] = None
    b3: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    fn: Optional[Callable] = None
    extrapolation: str = "linear"
    growth_order: float = 1.0

    def __post_init__(self):
        if self.kind == "caplet":
            if self.strike is None or not self.strike > 0:
                raise ValueError("caplet strike must be positive")
        elif self.kind == "grid":
            b2 = np.asarray(self.b2, dtype=float)
            b3 = np.asarray(self.b3, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if v.shape != (b2.size, b3.size):
                raise ValueError(f"payoff values must have shape ({b2.size}, {b3.size}), got {v.shape}")
            if b2.size < 2 or b3.size < 2 or np.any(np.diff(b2) <= 0) or np.any(np.diff(b3) <= 0):
                raise ValueError("payoff grid axes need at least two increasing points")
            if not np.all(np.isfinite(v)):
                raise ValueError("payoff samples must be finite")
            if self.extrapolation not in ("linear", "flat"):
                raise ValueError("extrapolation must be 'linear' or 'flat'")
            object.__setattr__(self, "b2", b2)
            object.__setattr__(self, "b3", b3)
            object.__setattr__(self, "values", v)
        elif self.kind == "callable":
            if self.fn is None:
                raise ValueError("callable payoff needs fn")
        else:
            raise ValueError(f"unknown payoff kind {self.kind!r}")

    @classmethod
    def caplet(cls, K: float = 1.0) -> "PayoffSpec":
        """``Φ(b₂, b₃) = (b₃ - K)^+``; in T₂ units ``Φ̂(x, y) = (y - K x)^+``."""
        return cls("caplet", strike=float(K))

    @classmethod
    def from_callable(cls, fn: Callable, growth_order: float = 1.0) -> "PayoffSpec":
        return cls("callable", fn=fn, growth_order=growth_order)

    @classmethod
    def from_grid(cls, b2, b3, values, extrapolation: str = "linear") -> "PayoffSpec":
        return cls("grid", b2=b2, b3=b3, values=values, extrapolation=extrapolation)

    @classmethod
    def load_grid(cls, path) -> "PayoffSpec":
        """JSON ``{b2, b3, values[, extrapolation]}`` or long CSV with columns b2,b3,value."""
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".csv":
            rows = list(csv.DictReader(io.StringIO(text)))
            try:
                trip = [(float(r["b2"]), float(r["b3"]), float(r["value"])) for r in rows]
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: payoff CSV needs numeric columns b2,b3,value") from exc
            b2 = sorted({t[0] for t in trip})
            b3 = sorted({t[1] for t in trip})
            vals = np.full((len(b2), len(b3)), np.nan)
            for x, y, v in trip:
                vals[b2.index(x), b3.index(y)] = v
            if np.isnan(vals).any():
                raise ValueError(f"{path}: payoff CSV does not fill the full b2 x b3 grid")
            return cls.from_grid(b2, b3, vals)
        try:
            d = json.loads(text)
            return cls.from_grid(d["b2"], d["b3"], d["values"], d.get("extrapolation", "linear"))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}: payoff JSON needs b2, b3, values ({exc})") from exc

    @classmethod
    def parse(cls, text: str) -> "PayoffSpec":
        """``caplet:K=1.0`` / ``caplet:1.0`` / ``grid:PATH`` (JSON or CSV, see :meth:`load_grid`)."""
        head, _, rest = text.partition(":")
        head = head.strip().lower()
        if head == "caplet":
            arg = rest.strip()
            if arg.upper().startswith("K="):
                arg = arg[2:]
            try:
                return cls.caplet(float(arg) if arg else 1.0)
            except ValueError as exc:
                raise ValueError(f"bad caplet strike in {text!r}") from exc
        if head == "grid":
            return cls.load_grid(rest.strip())
        raise ValueError(f"unrecognized payoff spec {text!r}")

    def phi(self, b2, b3) -> np.ndarray:
        b2 = np.asarray(b2, dtype=float)
        b3 = np.asarray(b3, dtype=float)
        if self.kind == "caplet":
            return np.maximum(b3 - self.strike, 0.0)
        if self.kind == "callable":
            return np.asarray(self.fn(b2, b3), dtype=float)
        return _bilinear(self.b2, self.b3, self.values, b2, b3, self.extrapolation)

    def describe(self) -> dict:
        if self.kind == "caplet":
            return {"kind": "caplet", "strike": self.strike}
        if self.kind == "grid":
            return {"kind": "grid", "shape": list(self.values.shape), "extrapolation": self.extrapolation}
        return {"kind": "callable", "growth_order": self.growth_order}


def _bilinear(ax, ay, V, x, y, extrapolation):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if extrapolation == "flat":
        x = np.clip(x, ax[0], ax[-1])
        y = np.clip(y, ay[0], ay[-1])
    i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, ax.size - 2)
    j = np.clip(np.searchsorted(ay, y, side="right") - 1, 0, ay.size - 2)
    tx = (x - ax[i]) / (ax[i + 1] - ax[i])
    ty = (y - ay[j]) / (ay[j + 1] - ay[j])
    return (
        V[i, j] * (1 - tx) * (1 - ty)
        + V[i + 1, j] * tx * (1 - ty)
        + V[i, j + 1] * (1 - tx) * ty
        + V[i + 1, j + 1] * tx * ty
    )


def transformed(p: PayoffSpec) -> Callable:
    """``Φ̂(x, y) = Φ(1/x, y/x)·x`` as a vectorized callable (T₂-bond units)."""
    if p.kind == "caplet":
        K = p.strike

        def hat(x, y):
            x = np.asarray(x, dtype=float)
            return np.maximum(np.asarray(y, dtype=float) - K * x, 0.0)

        return hat

    def hat(x, y):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("payoff transform needs x > 0")
        return p.phi(1.0 / x, np.asarray(y, dtype=float) / x) * x

    return hat


def transform_payoff(p: PayoffSpec, x_grid: Sequence[float], y_grid: Sequence[float]) -> np.ndarray:
    """Sample ``Φ̂`` on the tensor grid ``x_grid × y_grid``."""
    xs = np.asarray(x_grid, dtype=float).reshape(-1)
    ys = np.asarray(y_grid, dtype=float).reshape(-1)
    if np.any(xs <= 0):
        raise ValueError("x grid must be strictly positive")
    if p.kind == "caplet":
        return np.maximum(ys[None, :] - p.strike * xs[:, None], 0.0)
    return p.phi(1.0 / xs[:, None], ys[None, :] / xs[:, None]) * xs[:, None]


# -- bounds ----------------------------------------------------------------------------


@dataclass
class BoundsReport:
    lower: float
    upper: float
    discounted_lower: float
    discounted_upper: float
    p0_T2: float
    certificates: dict
    diagnostics: dict = field(default_factory=dict)
    lower_solution: Optional[WotSolution] = None
    upper_solution: Optional[WotSolution] = None

    def to_dict(self) -> dict:
        from .wot_solvers import _jsonable

        return _jsonable({
            "lower": self.lower,
            "upper": self.upper,
            "discounted_lower": self.discounted_lower,
            "discounted_upper": self.discounted_upper,
            "p0_T2": self.p0_T2,
            "certificates": self.certificates,
            "diagnostics": self.diagnostics,
        })

    def summary(self) -> str:
        lines = [
            f"lower bound (money, t=0): {self.lower:.10g}",
            f"upper bound (money, t=0): {self.upper:.10g}",
            f"lower bound (T2 units):   {self.discounted_lower:.10g}",
            f"upper bound (T2 units):   {self.discounted_upper:.10g}",
        ]
        for side in ("lower", "upper"):
            c = self.certificates.get(side, {})
            v = c.get("verification", {})
            if v:
                lines.append(
                    f"{side} certificate: value {v.get('certificate_value'):.10g}, "
                    f"worst violation {v.get('worst_violation'):.3e}, ok={v.get('ok')}"
                )
        pi = self.diagnostics.get("pi_restricted_upper")
        if pi is not None and abs(pi - self.discounted_upper) > 1e-12:
            lines.append(f"upper over couplings only (atomic mu): {pi:.10g} (T2 units)")
        return "\n".join(lines) + "\n"


def _scaled_triplet(t: DualTriplet, K: float) -> DualTriplet:
    """Express a triplet for ``(y - x')^+`` with ``x' = K x`` in the original x."""
    return DualTriplet(lambda x: t.phi(K * np.asarray(x, dtype=float)), t.psi, t.delta, t.threshold, t.sense,
                       dict(t.meta, x_scale=K))


def price_bounds(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    payoff: PayoffSpec,
    p0_T2: float | MarketQuotes = 1.0,
    *,
    grid: int = 41,
    m: Optional[int] = None,
) -> BoundsReport:
    """Certified robust lower/upper prices of ``payoff``.

    Caplets use the weak monotone rearrangement (lower) and the
    anticomonotone coupling (upper) with closed-form hedges. General payoffs
    solve the barycentric LP on a grid of ``grid`` intermediate points and
    the dual LP over concave/convex ψ; the duality gap is reported.
    """
    p0 = p0_T2.p0_T2 if isinstance(p0_T2, MarketQuotes) else float(p0_T2)
    if np.any(mu.support < 0) or (payoff.kind != "caplet" and np.any(mu.support <= 0)):
        # caplets extend continuously to x = 0; general payoffs need 1/x
        raise InvalidMeasureError("mu must be supported on (0, inf) ([0, inf) for caplets)")
    if payoff.kind == "caplet":
        lo, up, certs, diag = _caplet_bounds(mu, nu, payoff.strike)
    else:
        lo, up, certs, diag = _general_bounds(mu, nu, payoff, grid, m)
    dl, du = lo.value, up.value
    if dl > du + 1e-8:
        raise CertificateError(f"lower bound {dl:.12g} exceeds upper bound {du:.12g}")
    diag["payoff"] = payoff.describe()
    return BoundsReport(p0 * dl, p0 * du, dl, du, p0, certs, diag, lo, up)


def _pi_upper(mu: DiscreteMeasure, nu: DiscreteMeasure, theta_fn) -> Optional[float]:
    from .oracles import pi_sup_bruteforce

    return pi_sup_bruteforce(mu, nu, theta_fn)


def _caplet_bounds(mu, nu, K):
    muK = mu.push_forward(lambda x: K * x)
    pp = PiecewiseLinear.positive_part()
    lo = wot_lower_barycentric(muK, nu, pp)
    up = wot_upper_barycentric(muK, nu, pp)
    certs, diag = {}, {"strike": K}
    payoff = lambda x, y: np.maximum(np.asarray(y) - K * np.asarray(x), 0.0)  # noqa: E731
    for side, sol, T in (("lower", lo, np.asarray(lo.diagnostics["T"])), ("upper", up, None)):
        cert: CapletCertificate = caplet_certificate(muK, nu, side, T=T)
        if abs(cert.value - sol.value) > CERT_VALUE_TOL:
            raise CertificateError(
                f"{side} certificate value {cert.value:.12g} differs from primal {sol.value:.12g}",
                violation=cert.value - sol.value,
            )
        trip = _scaled_triplet(cert.triplet, K)
        extra = [cert.triplet.threshold / K if math.isfinite(cert.triplet.threshold) else np.nan]
        xs, ys = verification_grid(mu, nu, muK.support, extra, [cert.triplet.threshold], pad=1.0)
        xs = xs[xs >= 0]
        report = verify_hedge(trip, payoff, xs, ys, ys, mu, nu)
        if not report.ok:
            raise CertificateError(f"{side} caplet hedge fails at {report.point}", report.worst, report.point)
        trip.report = report
        certs[side] = trip.to_dict(mu.support, nu.support)
        diag[f"{side}_threshold_source"] = cert.source
        diag[f"{side}_duality_gap"] = cert.value - sol.value
    pi_up = _pi_upper(muK, nu, lambda z: np.maximum(z, 0.0))
    diag["pi_restricted_upper"] = pi_up
    diag["lower_iterations"] = lo.diagnostics.get("iterations")
    diag["upper_iterations"] = up.diagnostics.get("iterations")
    return lo, up, certs, diag


def _general_bounds(mu, nu, payoff: PayoffSpec, grid: int, m: Optional[int]):
    hat = transformed(payoff)
    wmr = weak_monotone_rearrangement(mu, nu)
    H = candidate_grid(nu, wmr.nu_star, np.linspace(nu.support[0], nu.support[-1], max(grid, 2)))
    C = np.asarray(hat(mu.support[:, None], H[None, :]), dtype=float)
    certs, diag = {}, {"grid_size": int(H.size)}
    sols = {}
    for side, lp_sense, dual_sense in (("lower", "minimize", "sub"), ("upper", "maximize", "super")):
        res = barycentric_lp(mu, nu, C, H, lp_sense, f"general_{side}")
        sol = _barycentric_solution(mu, nu, res, C, {})
        dual = general_dual(mu, nu, hat, H, dual_sense)
        report = verify_hedge(dual.triplet, hat, mu.support, H, nu.support, mu, nu)
        if not report.ok:
            raise CertificateError(f"{side} hedge fails at {report.point} by {report.worst:.3e}", report.worst, report.point)
        dual.triplet.report = report
        certs[side] = dual.triplet.to_dict(mu.support, H)
        diag[f"{side}_duality_gap"] = dual.value - sol.value
        sols[side] = sol
    mm, exact = (m, True) if m is not None else default_resolution(nu)
    cost = CostSpec.kernel_direct(lambda xs, W, ys: hat(np.asarray(xs)[:, None], (W @ ys)[None, :]))
    try:
        diag["relaxed_lower"] = relaxed_wot(mu, nu, cost, mm, "min").value
        diag["relaxed_upper"] = relaxed_wot(mu, nu, cost, mm, "max").value
        diag["relaxed_m"] = mm
        diag["relaxed_approximate"] = not exact
    except Exception as exc:  # diagnostics only
        diag["relaxed_error"] = str(exc)
    return sols["lower"], sols["upper"], certs, diag


# -- extremal models ----------------------------------------------------------------------


def extremal_model_report(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    lower: Optional[WotSolution] = None,
    upper: Optional[WotSolution] = None,
    K: float = 1.0,
) -> dict:
    """Lower and upper extremal models of the caplet problem.

    Each model lists ``(x, y1, kernel of Y₂, weight)`` rows together with the
    implied bond prices ``p(T₁,T₂) = 1/x`` and ``p(T₁,T₃) = y₁/x`` (None at x = 0).
    """
    muK = mu.push_forward(lambda x: K * x)
    pp = PiecewiseLinear.positive_part()
    lower = lower or wot_lower_barycentric(muK, nu, pp)
    upper = upper or wot_upper_barycentric(muK, nu, pp)
    xmap = dict(zip(muK.support.tolist(), mu.support.tolist()))

    def rows_from(pi: Coupling, chi_rows: Callable):
        rows = []
        for i, xK in enumerate(pi.x_support):
            for l, y1 in enumerate(pi.y_support):
                w = pi.matrix[i, l]
                if w <= 1e-14:
                    continue
                kern = chi_rows(l, y1)
                x = xmap.get(float(xK), float(xK) / K)
                rows.append({
                    "x": x,
                    "y1": float(y1),
                    "weight": float(w),
                    "kernel": kern.to_dict(),
                    # X1 = 0 has no finite bond price; reported as null
                    "p_T1_T2": 1.0 / x if x > 0 else None,
                    "p_T1_T3": float(y1) / x if x > 0 else None,
                })
        return rows

    chi = lower.mart

    def lower_kernel(l, y1):
        r = int(np.argmin(np.abs(chi.x_support - y1)))
        row = chi.matrix[r]
        keep = row > 1e-15
        return DiscreteMeasure.from_atoms(chi.y_support[keep], row[keep] / row[keep].sum())

    lower_rows = rows_from(lower.coupling, lower_kernel)
    upper_rows = rows_from(upper.coupling, lambda l, y1: DiscreteMeasure.dirac(y1))
    to_kd = lambda rows: KernelDistribution(  # noqa: E731
        [KernelAtom(r["x"], DiscreteMeasure.from_dict(r["kernel"]), r["weight"]) for r in rows], renormalize=True
    )
    return {
        "lower": {"rows": lower_rows, "kernel_distribution": to_kd(lower_rows).to_list(),
                  "description": "Y1 = T(X1) with T the weak monotone rearrangement; Y2 drawn from a martingale kernel"},
        "upper": {"rows": upper_rows, "kernel_distribution": to_kd(upper_rows).to_list(),
                  "description": "Y1 = Y2, anticomonotone with X1"},
    }


def extremal_models_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "x", "y1", "weight", "y2", "kernel_weight", "p_T1_T2", "p_T1_T3"])
    for model in ("lower", "upper"):
        for r in report[model]["rows"]:
            for y2, kw in zip(r["kernel"]["support"], r["kernel"]["weights"]):
                w.writerow([model, repr(r["x"]), repr(r["y1"]), repr(r["weight"]), repr(y2), repr(kw),
                            "" if r["p_T1_T2"] is None else repr(r["p_T1_T2"]),
                            "" if r["p_T1_T3"] is None else repr(r["p_T1_T3"])])
    return buf.getvalue()


# -- model sampling ----------------------------------------------------------------------


def random_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure, rng: np.random.Generator, vertices: int = 3) -> Coupling:
    """Random element of Π(μ,ν): a convex mix of random LP vertices and the product."""
    mats = [np.outer(mu.weights, nu.weights)]
    for _ in range(vertices):
        plan, _, _ = transport_lp(mu.weights, nu.weights, rng.standard_normal((len(mu), len(nu))), name="random_vertex")
        mats.append(np.maximum(plan, 0.0))
    lam = rng.dirichlet(np.ones(len(mats)) * 0.5)
    M = sum(l * P for l, P in zip(lam, mats))
    return Coupling(mu.support, nu.support, M / M.sum())


def random_model(mu: DiscreteMeasure, nu: DiscreteMeasure, rng: np.random.Generator, splits: int = 3) -> list:
    """Random consistent model as rows ``(x, y1, kernel, weight)``.

    Each kernel ``π_x`` of a random coupling is split into up to ``splits``
    sub-kernels; ``Y₁`` is the barycenter of the sub-kernel and ``Y₂`` is
    drawn from it, so ``E[Y₂ | X₁, Y₁] = Y₁``.
    """
    c = random_coupling(mu, nu, rng)
    rows = []
    for x, row in zip(c.x_support, c.matrix):
        if row.sum() <= 1e-15:
            continue
        r = int(rng.integers(1, splits + 1))
        if rng.random() < 0.2:
            share = np.eye(r)[rng.integers(0, r, len(nu))].T  # one-hot: Dirac sub-kernels
        else:
            share = rng.dirichlet(np.ones(r), size=len(nu)).T
        for w_r in share:
            mass = row * w_r
            tot = mass.sum()
            if tot <= 1e-15:
                continue
            keep = mass > 1e-16
            kern = DiscreteMeasure.from_atoms(nu.support[keep], mass[keep] / tot, renormalize_tol=1e-8)
            rows.append((float(x), kern.mean, kern, float(tot)))
    return rows


def model_price(rows: list, payoff: Callable) -> float:
    """``E[Φ̂(X₁, Y₁)]`` for a model in row form."""
    return float(sum(w * float(payoff(x, y1)) for x, y1, _, w in rows))


def model_to_kernel_distribution(rows: list) -> KernelDistribution:
    return KernelDistribution([KernelAtom(x, k, w) for x, _, k, w in rows], renormalize=True)


# -- fixtures ---------------------------------------------------------------------------------


def fixture(name: str) -> tuple[MarketQuotes, DiscreteMeasure, DiscreteMeasure]:
    """Three synthetic instrument fixtures used by examples and tests."""
    if name == "two_bond_states":
        mu = DiscreteMeasure([1.0, 1.1], [0.5, 0.5])
        nu = DiscreteMeasure([0.9, 1.0], [0.5, 0.5])
        k12 = [1 / 1.2, 1 / 1.1, 1 / 1.05, 1 / 1.0, 1 / 0.95]
        k23 = [0.8, 0.85, 0.9, 0.95, 1.0, 1.05]
    elif name == "skewed":
        mu = DiscreteMeasure([1.0, 1.05, 1.1, 1.2], [0.1, 0.4, 0.3, 0.2])
        nu = DiscreteMeasure([0.85, 0.9, 0.95, 1.0], [0.2, 0.3, 0.3, 0.2])
        k12 = [1 / t for t in (1.25, 1.2, 1.15, 1.1, 1.05, 1.0, 0.95)]
        k23 = [0.8, 0.85, 0.9, 0.95, 1.0, 1.05]
    elif name == "wide":
        mu = DiscreteMeasure([1.0, 1.25, 1.5, 2.0], [0.25, 0.25, 0.25, 0.25])
        nu = DiscreteMeasure([0.5, 0.75, 1.0, 1.25, 1.5], [0.1, 0.2, 0.4, 0.2, 0.1])
        k12 = [1 / t for t in (2.25, 2.0, 1.75, 1.5, 1.25, 1.0, 0.75)]
        k23 = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75]
    else:
        raise KeyError(f"unknown fixture {name!r}")
    return synthetic_quotes(mu, nu, k12, k23, p0_T2=0.95), mu, nu


FIXTURES = ("two_bond_states", "skewed", "wide")


def marginal_fixture(name: str) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Marginal-level fixtures. ``two_state`` has an X1 atom at 0, which no bond quotes can imply."""
    if name == "two_state":
        return DiscreteMeasure([0.0, 4.0], [0.5, 0.5]), DiscreteMeasure([1.0, 3.0], [0.5, 0.5])
    if name == "dirac_nu":
        return DiscreteMeasure([0.9, 1.0, 1.2], [0.3, 0.4, 0.3]), DiscreteMeasure.dirac(0.95)
    raise KeyError(f"unknown marginal fixture {name!r}")
