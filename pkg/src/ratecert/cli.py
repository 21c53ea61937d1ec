"""Command-line interface: certify, sweep, simulate, sproc.

Exit codes: 0 success, 1 usage or solver error, 2 no certificate found (or,
for ``simulate``, a Lyapunov trace that is not monotone).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np

from . import baselines, certify, sim, sproc
from .model import (AlgorithmSpec, Family, OracleKind, build_algorithm, default_beta,
                    parse_family, parse_kind, standard_oracles)

log = logging.getLogger("ratecert")

DEFAULT_KAPPAS = np.logspace(0.3, 3, 25)
DEFAULT_ETA_L = np.logspace(-2, 2, 50)
EXIT_OK, EXIT_ERROR, EXIT_NO_CERT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dump(obj: Any, fh=None) -> None:
    json.dump(_jsonable(obj), fh or sys.stdout, indent=2, allow_nan=False)
    (fh or sys.stdout).write("\n")


def _threads() -> int:
    raw = os.environ.get("RATECERT_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"RATECERT_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise UsageError("RATECERT_THREADS must be at least 1")
        return n
    return min(4, os.cpu_count() or 1)


def _ordered_map(fn: Callable, items: Sequence) -> list:
    """Evaluate concurrently, return results in input order."""
    workers = min(_threads(), max(len(items), 1))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return ""
    return "inf" if math.isinf(x) and x > 0 else repr(x)


# -- certify -----------------------------------------------------------------


def _load_config(path: str) -> AlgorithmSpec:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    try:
        return AlgorithmSpec.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad algorithm descriptor: {exc}") from None


def _spec_from_args(args) -> tuple[AlgorithmSpec, tuple]:
    if args.config:
        spec = _load_config(args.config)
        if spec.oracles:
            return spec, tuple(spec.oracles)
        if args.m is None or args.L is None:
            raise UsageError("descriptor has no oracles; give --oracle, --m and --L")
    else:
        missing = [f for f in ("algorithm", "m", "L", "eta") if getattr(args, f) is None]
        if missing:
            raise UsageError("missing required arguments: " + ", ".join("--" + f for f in missing))
        fam = parse_family(args.algorithm)
        beta = args.beta
        if fam is Family.NESTEROV and beta is None:
            beta = default_beta(args.m, args.L)
        spec = AlgorithmSpec(fam, eta=args.eta, beta=beta)
    classes = standard_oracles(spec.family, args.oracle, args.m, args.L, spec.eta)
    return spec, classes


def cmd_certify(args) -> int:
    spec, classes = _spec_from_args(args)
    model = build_algorithm(spec).with_oracles(list(classes))
    r = args.window
    if r is None:
        r = 1 if any(c.kind is OracleKind.SMOOTH for c in classes) else 0
    res = certify.certify_rate(model, r, tol=args.tol, rho_max=args.rho_max)
    out = res.to_json()
    out["iteration_complexity"] = (baselines.iteration_complexity(res.rho)
                                   if res.found and res.rho > 0 else None)
    out["algorithm"] = spec.to_json()
    out["oracles"] = [c.to_json() for c in classes]
    _dump(out)
    return EXIT_OK if res.found else EXIT_NO_CERT


# -- sweep -------------------------------------------------------------------


def _rate(model, r, tol, fallback: int | None = None):
    res = certify.certify_rate(model, r, tol=tol)
    if not res.found and fallback is not None:
        res = certify.certify_rate(model, fallback, tol=tol)
    return res


def _nesterov_row(kappa: float, kinds: Sequence[OracleKind], tol: float) -> dict:
    L, m = 1.0, 1.0 / kappa
    spec = AlgorithmSpec(Family.NESTEROV, eta=1.0 / L, beta=default_beta(m, L))
    base = build_algorithm(spec)
    row = {"kappa": kappa, "m": m, "L": L, "eta": spec.eta, "beta": spec.beta}
    status = []
    for kind in (OracleKind.SECTOR, OracleKind.SLOPE, OracleKind.SMOOTH):
        key = {"sector": "c", "slope": "m", "smooth": "f"}[kind.value]
        if kind not in kinds:
            continue
        model = base.with_oracles([standard_oracles(Family.NESTEROV, kind, m, L)[0]])
        if kind is OracleKind.SECTOR:
            res = _rate(model, 0, tol)
        elif kind is OracleKind.SLOPE:
            res = _rate(model, 1, tol, fallback=2)
        else:
            res = _rate(model, 1, tol)
        row[f"rho_{key}"] = res.rho
        row[f"ic_{key}"] = baselines.iteration_complexity(res.rho) if res.found else math.inf
        status.append(f"{key}:{'ok' if res.found else 'none'}")
    est = baselines.analytic_rate("estimate-sequence", m, L)
    row["rho_estimate"] = est
    row["ic_estimate"] = baselines.iteration_complexity(est)
    row["status"] = ";".join(status)
    return row


def _admm_row(point: tuple[float, float], tol: float, form: Family) -> dict:
    kappa, eta_l = point
    L = kappa
    m = 1.0
    eta = eta_l / L
    model = build_algorithm(AlgorithmSpec(form, eta=eta)).with_oracles(
        list(standard_oracles(form, "sector", m, L, eta)))
    res = _rate(model, 0, tol)
    deng = baselines.analytic_rate("admm-deng", m, L, eta)
    lower = baselines.analytic_rate("admm-lower", m, L, eta)
    return {
        "kappa": kappa, "eta_L": eta_l, "m": m, "L": L, "eta": eta,
        "rho": res.rho, "rho_deng": deng, "rho_lower": lower,
        "ic": baselines.iteration_complexity(res.rho) if res.found else math.inf,
        "ic_deng": baselines.iteration_complexity(deng),
        "status": "ok" if res.found else "none",
    }


def _gd_row(point: tuple[float, float], tol: float, kind: OracleKind) -> dict:
    kappa, eta_l = point
    L, m = 1.0, 1.0 / kappa
    model = build_algorithm(AlgorithmSpec(Family.GD, eta=eta_l)).with_oracles(
        [standard_oracles(Family.GD, kind, m, L)[0]])
    res = _rate(model, 1 if kind is OracleKind.SMOOTH else 0, tol)
    polyak = baselines.analytic_rate("polyak-gd", m, L, eta_l)
    return {"kappa": kappa, "eta_L": eta_l, "m": m, "L": L, "eta": eta_l,
            "rho": res.rho, "rho_polyak": polyak,
            "ic": baselines.iteration_complexity(res.rho) if res.found else math.inf,
            "status": "ok" if res.found else "none"}


SWEEP_COLUMNS = {
    "nesterov": ["kappa", "m", "L", "eta", "beta", "rho_c", "rho_m", "rho_f", "rho_estimate",
                 "ic_c", "ic_m", "ic_f", "ic_estimate", "status"],
    "admm": ["kappa", "eta_L", "m", "L", "eta", "rho", "rho_deng", "rho_lower", "ic",
             "ic_deng", "status"],
    "gd": ["kappa", "eta_L", "m", "L", "eta", "rho", "rho_polyak", "ic", "status"],
}


def _grid(values, default) -> list[float]:
    grid = list(default) if values is None else list(values)
    if not grid:
        raise UsageError("empty grid")
    for v in grid:
        if not (math.isfinite(v) and v > 0):
            raise UsageError(f"grid values must be positive and finite, got {v}")
    return [float(v) for v in grid]


def run_sweep(algorithm: str, kappas: Sequence[float] | None = None,
              eta_ls: Sequence[float] | None = None, classes: str = "c,m,f",
              tol: float = certify.DEFAULT_TOL, admm_form: str = "admm-grad") -> list[dict]:
    """Rows of a sweep in deterministic grid order."""
    algorithm = algorithm.lower()
    if algorithm == "nesterov":
        kinds = [parse_kind(k) for k in classes.split(",") if k.strip()]
        if not kinds:
            raise UsageError("no oracle classes requested")
        grid = _grid(kappas, DEFAULT_KAPPAS)
        return _ordered_map(lambda k: _nesterov_row(k, kinds, tol), grid)
    if algorithm == "admm":
        ks = _grid(kappas, [100.0])
        if any(k <= 1 for k in ks):
            raise UsageError("ADMM sweeps need kappa > 1")
        pts = [(k, e) for k in ks for e in _grid(eta_ls, DEFAULT_ETA_L)]
        form = parse_family(admm_form)
        if form not in (Family.ADMM_GRAD, Family.ADMM_PROX):
            raise UsageError("--admm-form must be admm-grad or admm-prox")
        return _ordered_map(lambda p: _admm_row(p, tol, form), pts)
    if algorithm == "gd":
        kinds = [parse_kind(k) for k in classes.split(",") if k.strip()]
        kind = kinds[0] if kinds else OracleKind.SECTOR
        pts = [(k, e) for k in _grid(kappas, [10.0]) for e in _grid(eta_ls, np.linspace(0.1, 1.9, 10))]
        return _ordered_map(lambda p: _gd_row(p, tol, kind), pts)
    raise UsageError(f"sweep supports nesterov, admm and gd, not {algorithm!r}")


def write_sweep_csv(fh, algorithm: str, rows: Sequence[dict]) -> None:
    cols = SWEEP_COLUMNS[algorithm.lower()]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in cols])


def cmd_sweep(args) -> int:
    rows = run_sweep(args.algorithm, args.kappa, args.eta_l, args.classes, args.tol,
                     args.admm_form)
    if args.out in (None, "-"):
        write_sweep_csv(sys.stdout, args.algorithm, rows)
        return EXIT_OK
    try:
        with open(args.out, "w", newline="") as fh:
            write_sweep_csv(fh, args.algorithm, rows)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    fn = sim.TestFunction(args.fn, args.m, args.L)
    fam = parse_family(args.algorithm)
    eta = args.eta if args.eta is not None else 1.0 / args.L
    beta = None
    if fam is Family.NESTEROV:
        beta = args.beta if args.beta is not None else default_beta(args.m, args.L)
    spec = AlgorithmSpec(fam, eta=eta, beta=beta)
    traj = sim.run_trajectory(fn, spec, args.x0, args.steps)
    trace = None
    meta: dict[str, Any] = {"fn": fn.id, "m": fn.m, "L": fn.L, "steps": args.steps,
                            "x0": list(args.x0), "algorithm": spec.to_json()}
    if args.with_certificate:
        model = build_algorithm(spec).with_oracles(
            [standard_oracles(fam, OracleKind.SMOOTH, args.m, args.L)[0]])
        res = certify.certify_rate(model, args.window, tol=args.tol)
        if not res.found:
            meta["certificate"] = None
            _dump(meta, sys.stderr)
            return EXIT_NO_CERT
        trace = sim.lyapunov_trace(traj, res.certificate, strict=False)
        meta.update(rho=res.rho, rho_sq=res.rho ** 2, max_ratio=trace.max_ratio,
                    checked_ratios=trace.checked, monotone=trace.monotone)
    if args.out in (None, "-"):
        sim.write_trace_csv(sys.stdout, traj, trace)
    else:
        try:
            sim.write_trace_csv(args.out, traj, trace)
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc}") from None
    _dump(meta, sys.stderr)
    return EXIT_OK if trace is None or trace.monotone else EXIT_NO_CERT


# -- sproc -------------------------------------------------------------------


def cmd_sproc(args) -> int:
    out: dict[str, Any] = {}
    if args.S is not None or args.Q is not None:
        if args.S is None or args.Q is None:
            raise UsageError("--S and --Q go together")
        S = np.array([[args.S[0], args.S[1]], [args.S[1], args.S[2]]])
        Q = np.array([[args.Q[0], args.Q[1]], [args.Q[1], args.Q[2]]])
        lam = sproc.find_multiplier(S, Q)
        if isinstance(lam, sproc.NoMultiplier):
            out["multiplier"] = None
            out["witness"] = None if lam.witness is None else lam.witness.tolist()
            out["degenerate_hypothesis"] = lam.degenerate
        else:
            out["multiplier"] = lam
            out["degenerate_hypothesis"] = sproc.hypothesis_degenerate(S)
    if args.m is not None and args.L is not None:
        out["identities"] = [
            {"name": d.name, "coef": d.coef, "conclusion": d.conclusion,
             "weight": d.weight, "residual": d.residual}
            for d in sproc.sector_identities(args.m, args.L)
        ]
        lam = sproc.find_multiplier(sproc.sector_form(args.m, args.L),
                                    np.diag([args.m ** 2, -1.0]))
        out["sector_multiplier"] = None if isinstance(lam, sproc.NoMultiplier) else lam
    if not out:
        raise UsageError("give --m and --L, or --S and --Q")
    _dump(out)
    return EXIT_OK if out.get("multiplier", 0) is not None else EXIT_NO_CERT


# -- parser ------------------------------------------------------------------


def _positive(text: str) -> float:
    x = float(text)
    if not (math.isfinite(x) and x > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def _L_value(text: str) -> float:
    return math.inf if text.strip().lower() in ("inf", "infinity") else float(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ratecert", description="Certify worst-case convergence rates of "
                "first-order methods with dissipation inequalities.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("certify", help="certify one algorithm/oracle configuration")
    c.add_argument("--algorithm", help="gd, pgd, nesterov, admm-grad, admm-prox")
    c.add_argument("--config", help="JSON algorithm descriptor (overrides --algorithm)")
    c.add_argument("--oracle", default="sector", help="sector (C), slope (M) or smooth (F)")
    c.add_argument("--m", type=float)
    c.add_argument("--L", type=_L_value)
    c.add_argument("--eta", type=_positive)
    c.add_argument("--beta", type=float)
    c.add_argument("--window", type=int, help="window length r (default 0, or 1 for smooth)")
    c.add_argument("--tol", type=_positive, default=certify.DEFAULT_TOL)
    c.add_argument("--rho-max", type=_positive, default=certify.DEFAULT_RHO_MAX)
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("sweep", help="rate versus condition number or stepsize, as CSV")
    s.add_argument("--algorithm", required=True, help="nesterov, admm or gd")
    s.add_argument("--kappa", type=float, nargs="*", help="condition numbers L/m")
    s.add_argument("--eta-l", type=float, nargs="*", help="normalized stepsizes eta*L")
    s.add_argument("--classes", default="c,m,f", help="comma-separated oracle classes")
    s.add_argument("--admm-form", default="admm-grad")
    s.add_argument("--tol", type=_positive, default=certify.DEFAULT_TOL)
    s.add_argument("--out", help="output CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("simulate", help="run a method on a test function, as CSV")
    t.add_argument("--fn", required=True, help="f1 or f2")
    t.add_argument("--algorithm", default="nesterov", help="gd or nesterov")
    t.add_argument("--m", type=float, default=0.01)
    t.add_argument("--L", type=float, default=1.0)
    t.add_argument("--eta", type=_positive)
    t.add_argument("--beta", type=float)
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--x0", type=float, nargs=2, default=[1.0, 0.5])
    t.add_argument("--with-certificate", action="store_true")
    t.add_argument("--window", type=int, default=1)
    t.add_argument("--tol", type=_positive, default=1e-6)
    t.add_argument("--out", help="output CSV path (default stdout)")
    t.set_defaults(func=cmd_simulate)

    q = sub.add_parser("sproc", help="S-procedure multipliers and sector identities")
    q.add_argument("--m", type=float)
    q.add_argument("--L", type=float)
    q.add_argument("--S", type=float, nargs=3, metavar=("S11", "S12", "S22"))
    q.add_argument("--Q", type=float, nargs=3, metavar=("Q11", "Q12", "Q22"))
    q.set_defaults(func=cmd_sproc)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ratecert: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except certify.CertificationError as exc:
        print(f"ratecert: solver error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"ratecert: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
