"""Command-line front end: ``wotbounds {marginals,bounds,oracle}``.

Exit codes: 0 success, 1 input error, 2 arbitrage or infeasibility,
3 certificate verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, lp_core
from .errors import (
    ArbitrageError,
    CertificateError,
    ConvexOrderError,
    GridResolutionError,
    InvalidMeasureError,
    LpError,
)
from .market import (
    MarketQuotes,
    PayoffSpec,
    extract_mu,
    extract_nu,
    extremal_model_report,
    extremal_models_csv,
    price_bounds,
)
from .measures import DiscreteMeasure
from .oracles import run_oracle_suite

EXIT_OK, EXIT_INPUT, EXIT_ARBITRAGE, EXIT_CERTIFICATE = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    quotes: Optional[str] = None
    mu: Optional[str] = None
    nu: Optional[str] = None
    payoff: str = "caplet:K=1"
    m: Optional[int] = None
    grid: int = 41
    tol: float = 1e-9
    seed: int = 0
    cases: int = 12
    out: Optional[str] = None
    p0: Optional[float] = None
    dump_lp: Optional[str] = None
    models_csv: Optional[str] = None
    inject_sign_flip: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not self.tol > 0:
            raise ValueError("--tol must be positive")
        if self.grid < 2:
            raise ValueError("--grid must be at least 2")
        if self.m is not None and self.m < 1:
            raise ValueError("--m must be at least 1")
        if self.cases < 1:
            raise ValueError("--cases must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wotbounds", description="Certified model-independent bounds for bond-option payoffs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with default values for any flag")
        sp.add_argument("--out", help="output path (file for bounds/oracle, directory for marginals)")
        sp.add_argument("--tol", type=float, help="LP feasibility/optimality tolerance")
        sp.add_argument("--seed", type=int, help="seed recorded in the output (and used by oracle)")
        sp.add_argument("--dump-lp", dest="dump_lp", metavar="DIR", help="write every LP solved to DIR as text")

    sm = sub.add_parser("marginals", help="extract mu and nu from quotes")
    common(sm)
    sm.add_argument("--quotes", help="quote CSV (instrument, maturity_pair, strike, price)")

    sb = sub.add_parser("bounds", help="compute certified price bounds")
    common(sb)
    sb.add_argument("--quotes")
    sb.add_argument("--mu", help="measure file (JSON or CSV) for X1")
    sb.add_argument("--nu", help="measure file (JSON or CSV) for Y2")
    sb.add_argument("--p0", type=float, help="p(0,T2) when --quotes is not given")
    sb.add_argument("--payoff", help="caplet:K=... or grid:PATH")
    sb.add_argument("--m", type=int, help="simplex-grid resolution for the relaxed cross-check")
    sb.add_argument("--grid", type=int, help="intermediate grid size for general payoffs")
    sb.add_argument("--models-csv", dest="models_csv", help="write caplet extremal-model kernels to CSV")

    so = sub.add_parser("oracle", help="run the randomized oracle cross-check suite")
    common(so)
    so.add_argument("--cases", type=int, help="instances per property")
    so.add_argument("--inject-sign-flip", dest="inject_sign_flip", action="store_true",
                    help="mutation check: flip the primal sign in the duality property")
    return p


def _load_config(argv: Optional[Sequence[str]]) -> RunConfig:
    args = _parser().parse_args(argv)
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ValueError("config file must hold a JSON object")
    known = set(RunConfig.__dataclass_fields__) - {"command", "extra"}
    cfg = RunConfig(command=args.command)
    for k, v in base.items():
        if k in known:
            setattr(cfg, k, v)
        else:
            cfg.extra[k] = v
    for k in known:
        v = getattr(args, k, None)
        if v is not None and v is not False:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _emit(cfg: RunConfig, payload: dict, text: str, default_name: str):
    payload = dict(payload, config=cfg.to_dict(), seed=cfg.seed, version=__version__)
    if cfg.out:
        out = Path(cfg.out)
        if out.suffix == "":
            out.mkdir(parents=True, exist_ok=True)
            out = out / default_name
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(_dumps(payload))
        out.with_suffix(".txt").write_text(text)
    sys.stdout.write(text)


def cmd_marginals(cfg: RunConfig) -> int:
    if not cfg.quotes:
        raise ValueError("marginals needs --quotes")
    q = MarketQuotes.load(cfg.quotes)
    em = extract_mu(q, detail=True)
    en = extract_nu(q, detail=True)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "mu.json").write_text(_dumps(em.measure.to_dict()))
    (out / "nu.json").write_text(_dumps(en.measure.to_dict()))
    report = {"mu": em.to_dict(), "nu": en.to_dict(), "p0_T2": q.p0_T2, "p0_T3": q.p0_T3,
              "config": cfg.to_dict(), "seed": cfg.seed, "version": __version__}
    (out / "marginals_report.json").write_text(_dumps(report))
    text = (
        f"mu: {len(em.measure)} atoms, repricing error {em.max_reprice_error:.3e}\n"
        f"nu: {len(en.measure)} atoms, repricing error {en.max_reprice_error:.3e}\n"
        f"wrote {out / 'mu.json'} and {out / 'nu.json'}\n"
    )
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bounds(cfg: RunConfig) -> int:
    payoff = PayoffSpec.parse(cfg.payoff)
    extraction = {}
    if cfg.quotes:
        q = MarketQuotes.load(cfg.quotes)
        p0 = q.p0_T2
        em, en = extract_mu(q, detail=True), extract_nu(q, detail=True)
        mu, nu = em.measure, en.measure
        extraction = {"mu": em.to_dict(), "nu": en.to_dict()}
    else:
        if not (cfg.mu and cfg.nu):
            raise ValueError("bounds needs --quotes or both --mu and --nu")
        mu, nu = DiscreteMeasure.load(cfg.mu), DiscreteMeasure.load(cfg.nu)
        p0 = cfg.p0 if cfg.p0 is not None else 1.0
    if cfg.mu and cfg.quotes:
        mu = DiscreteMeasure.load(cfg.mu)
    if cfg.nu and cfg.quotes:
        nu = DiscreteMeasure.load(cfg.nu)
    report = price_bounds(mu, nu, payoff, p0, grid=cfg.grid, m=cfg.m)
    report.diagnostics["extraction"] = extraction
    payload = {"report": report.to_dict(), "mu": mu.to_dict(), "nu": nu.to_dict()}
    if payoff.kind == "caplet":
        models = extremal_model_report(mu, nu, K=payoff.strike)
        payload["extremal_models"] = models
        if cfg.models_csv:
            csv_path = Path(cfg.models_csv)
            csv_path.parent.mkdir(parents=True, exist_ok=True)
            csv_path.write_text(extremal_models_csv(models))
    _emit(cfg, payload, report.summary(), "bounds.json")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    results = run_oracle_suite(cfg.seed, cfg.cases, cfg.inject_sign_flip)
    rows = [r.to_dict() for r in results]
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} worst={r.worst:.3e} tol={r.tolerance:.0e} cases={r.cases}"
             for r in results]
    ok = all(r.passed for r in results)
    lines.append("all properties pass" if ok else "oracle suite FAILED")
    _emit(cfg, {"properties": rows, "passed": ok}, "\n".join(lines) + "\n", "oracle.json")
    return EXIT_OK if ok else EXIT_CERTIFICATE


COMMANDS = {"marginals": cmd_marginals, "bounds": cmd_bounds, "oracle": cmd_oracle}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = _load_config(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    saved = (lp_core.CONFIG.feasibility_tol, lp_core.CONFIG.optimality_tol, lp_core.CONFIG.dump_dir)
    lp_core.configure(feasibility_tol=cfg.tol, optimality_tol=cfg.tol,
                      dump_dir=Path(cfg.dump_lp) if cfg.dump_lp else None)
    try:
        return COMMANDS[cfg.command](cfg)
    except CertificateError as exc:
        print(f"certificate error: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except ArbitrageError as exc:
        extra = f" (strikes {exc.strikes})" if exc.strikes else ""
        print(f"arbitrage: {exc}{extra}", file=sys.stderr)
        return EXIT_ARBITRAGE
    except (ConvexOrderError, LpError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_ARBITRAGE
    except GridResolutionError as exc:
        print(f"solver grid too coarse: {exc}", file=sys.stderr)
        return EXIT_ARBITRAGE
    except (InvalidMeasureError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        lp_core.configure(feasibility_tol=saved[0], optimality_tol=saved[1], dump_dir=saved[2])


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
