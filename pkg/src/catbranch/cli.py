"""Command-line entry point: ``catbranch <subcommand> --model FILE ...``.

Reports are JSON documents with a versioned schema. Tables go to CSV next to
the JSON report (``--csv`` overrides the path). Exit codes: 0 success, 1
invalid input or unmet hypotheses, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .extinction import FixedPointError, Q_at, extinction_report
from .limit_laws import PhiConvergenceError, solve_phi, tail_limit
from .model import ModelError, load_model
from .simulator import Caps, horizon_for_mean, mean_counts, run_ensemble, simulate_events
from .spectral import ConvergenceError, NotSupercriticalError, build_D, criticality_report, perron_root
from .taboo import taboo_transforms
from .verification import (HypothesisError, check_strong_hypotheses, density_smoothness_check,
                           dyadic_grid, verify_q, verify_Q, verify_strong_proxy, verify_weak)

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
NOT_SUPERCRITICAL = "model not supercritical; the limit theorems require rho(D(0)) > 1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _parse_label(model, token: str):
    token = token.strip()
    try:
        value = int(token)
        if model.contains(value):
            return value
    except ValueError:
        pass
    if model.contains(token):
        return token
    raise UsageError(f"unknown state {token!r}")


def _labels(model, text):
    if not text:
        return []
    return [_parse_label(model, t) for t in text.split(",") if t.strip()]


def _grid(text, t_end: float, default_points: int = 41) -> np.ndarray:
    if text is None:
        return np.linspace(0.0, t_end, default_points)
    if "," in text:
        g = np.array([float(v) for v in text.split(",")])
        if np.any(np.diff(g) < 0) or g[0] < 0:
            raise UsageError("--t-grid must be nondecreasing and nonnegative")
        return g
    n = int(text)
    if n < 2:
        raise UsageError("--t-grid needs at least 2 points")
    return np.linspace(0.0, t_end, n)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


class _Run:
    def __init__(self, args, model):
        self.args = args
        self.model = model
        self.tolerances = {}
        self.grids = {}
        self.csv_path = None

    def table(self, header, rows):
        if self.args.csv:
            path = Path(self.args.csv)
        elif self.args.out:
            path = Path(self.args.out).with_suffix(".csv")
        else:
            return
        _write_csv(path, header, rows)
        self.csv_path = str(path)

    def report(self, result: dict, status: str = "ok") -> dict:
        return _clean({
            "schema_version": SCHEMA_VERSION,
            "tool": "catbranch",
            "version": __version__,
            "command": self.args.command,
            "model_hash": self.model.model_hash,
            "seed": getattr(self.args, "seed", None),
            "tolerances": self.tolerances,
            "grids": self.grids,
            "status": status,
            "result": result,
            "csv": self.csv_path,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        })


def _tol(args, default):
    tol = default if args.tol is None else args.tol
    if not tol > 0:
        raise UsageError("--tol must be > 0")
    return tol


def cmd_classify(run: _Run):
    tol = _tol(run.args, 1e-10)
    run.tolerances["nu_bisection"] = tol
    rep = criticality_report(run.model, _labels(run.model, run.args.query_states), tol)
    return rep.to_dict(), "ok"


def cmd_malthus(run: _Run):
    tol = _tol(run.args, 1e-10)
    run.tolerances["nu_bisection"] = tol
    rep = criticality_report(run.model, _labels(run.model, run.args.query_states), tol)
    if rep.cls != "supercritical":
        raise NotSupercriticalError(
            f"model is {rep.cls} (rho(D(0)) = {rep.rho0:.12g}); no Malthusian parameter")
    D = build_D(run.model, rep.nu)
    out = rep.to_dict()
    out["rho_at_nu_minus_1"] = perron_root(D.entries) - 1.0
    out["window_converged"] = D.converged
    return out, "ok"


def cmd_extinction(run: _Run):
    tol = _tol(run.args, 1e-12)
    run.tolerances["fixed_point"] = tol
    rep = extinction_report(run.model, _labels(run.model, run.args.query_states), tol)
    status = "ok" if rep.residual <= 10 * tol else "not_converged"
    return rep.to_dict(), status


def cmd_taboo(run: _Run):
    m, args = run.model, run.args
    sources = _labels(m, args.query_states) or [m.start]
    if args.target is None:
        raise UsageError("taboo needs --target")
    target = _parse_label(m, args.target)
    taboo = _labels(m, args.taboo)
    lams = [0.0] if not args.lambdas else [float(v) for v in args.lambdas.split(",")]
    run.grids["lambda"] = lams
    rows, ok = [], True
    for lam in lams:
        vals, conv, radius, err = taboo_transforms(m, sources, target, taboo, lam)
        ok &= bool(conv)
        for x, v in zip(sources, vals):
            rows.append([str(x), lam, float(v), bool(conv), radius, float(err)])
    header = ["source", "lambda", "value", "converged", "window_radius", "error_bound"]
    run.table(header, rows)
    result = {"target": str(target), "taboo": [str(t) for t in taboo],
              "rows": [dict(zip(header, r)) for r in rows]}
    return result, "ok" if ok else "not_converged"


def cmd_phi(run: _Run):
    m, args = run.model, run.args
    tol = _tol(args, 1e-12)
    lam_max = args.lambda_max
    crit = criticality_report(m, _labels(m, args.query_states))
    if crit.cls != "supercritical":
        raise NotSupercriticalError(NOT_SUPERCRITICAL)
    ext = extinction_report(m, _labels(m, args.query_states))
    query = [x for x in [m.start, *_labels(m, args.query_states)] if m.catalyst_index(x) is None]
    sol = solve_phi(m, crit, ext, lambda_max=lam_max, tol=tol, query_states=query)
    run.tolerances.update({"phi_fixed_point": tol, "lambda_max": lam_max})
    run.grids["lambda"] = {"points": len(sol.lambda_grid), "min_positive": float(sol.lambda_grid[1]),
                           "max": float(sol.lambda_grid[-1])}
    header, rows = sol.to_rows()
    run.table(header, rows)
    states = list(m.sites) + [x for x in query if x not in m.sites]
    checks = {}
    h = float(sol.lambda_grid[1])
    for x in states:
        slope = (1.0 - float(sol.evaluate(h, x)[0])) / h
        limit, gap = tail_limit(sol, x)
        checks[str(x)] = {"c": crit.c[x], "slope_at_0": slope, "inverse_c": 1.0 / crit.c[x],
                          "tail_limit": limit, "tail_gap": gap, "Q": Q_at(m, ext.Q_w, x)}
    result = {"nu": sol.nu, "residual": sol.residual, "converged": sol.converged, "checks": checks}
    ok = sol.converged and sol.residual <= 10 * tol
    return result, "ok" if ok else "not_converged"


STRONG_POP_CAP = 100_000_000


def _caps(args, max_population: int | None = None) -> Caps:
    pop = args.max_population or max_population or Caps().max_population
    return Caps(max_population=pop, max_events=args.max_events)


def cmd_simulate(run: _Run):
    m, args = run.model, run.args
    if args.t_end is None or not args.t_end > 0:
        raise UsageError("simulate needs --t-end > 0")
    grid = _grid(args.t_grid, args.t_end, 101)
    run.grids["t"] = grid.tolist()
    seed = 0 if args.seed is None else args.seed
    if args.events:
        ev = simulate_events(m, args.t_end, seed, _caps(args), grid)
        run.table(["time", "kind", "site", "particle_id", "destination", "n_offspring"],
                  [[e.time, e.kind, e.site, e.particle_id,
                    "" if e.destination is None else e.destination,
                    "" if e.n_offspring is None else e.n_offspring] for e in ev.events])
        return {"engine": "event_queue", "events": len(ev.events), "truncated": ev.truncated,
                "final_total": int(ev.total[-1])}, "ok"
    ens = run_ensemble(m, grid, 1, seed, _caps(args), threads=args.threads)
    c = ens.counts[0]
    run.table(["t", "total"] + [f"local[{y}]" for y in ens.sites],
              [[t, *map(int, row)] for t, row in zip(grid, c)])
    return {"engine": "compiled", "sites": [str(y) for y in ens.sites],
            "truncated": bool(ens.truncated[0]), "events": int(ens.n_events[0]),
            "final_total": int(c[-1, 0])}, "ok"


def cmd_verify(run: _Run):
    m, args = run.model, run.args
    theorem = args.theorem
    crit = criticality_report(m)
    if theorem in ("strong", "weak") and crit.cls != "supercritical":
        raise NotSupercriticalError(NOT_SUPERCRITICAL)
    if theorem == "strong":
        check_strong_hypotheses(m)
    ext = extinction_report(m)
    target = 1e4 if theorem == "strong" else 1e3
    if args.t_end is not None:
        t_end = args.t_end
    elif crit.cls == "supercritical":
        t_end = horizon_for_mean(m, target, crit.nu)
    else:
        t_end = 50.0
    n_paths = 64
    if theorem == "strong":
        grid = dyadic_grid(t_end)
        R = args.reps or int(math.ceil(1.5 * n_paths / max(1.0 - ext.q_x[m.start], 1e-3)))
    else:
        grid = _grid(args.t_grid, t_end)
        R = args.reps or 10_000
    if R < 1:
        raise UsageError("--reps must be >= 1")
    # the strong check follows survivors to 1.5 t_end, far past the default cap
    caps = _caps(args, STRONG_POP_CAP if theorem == "strong" else None)
    run.grids["t"] = grid.tolist()
    run.tolerances.update({"ci": 0.99, "max_population": caps.max_population,
                           "max_events": caps.max_events})
    ens = run_ensemble(m, grid, R, args.seed, caps, threads=args.threads)
    extra = {}
    if theorem == "q":
        res = verify_q(m, ens, ext)
    elif theorem == "Q":
        res = verify_Q(m, ens, ext)
    elif theorem == "weak":
        sol = solve_phi(m, crit, ext, lambda_max=args.lambda_max,
                        query_states=[] if m.catalyst_index(m.start) is not None else [m.start])
        res = verify_weak(m, ens, sol, crit, ext)
        extra["density"] = density_smoothness_check(ens).to_dict()
        tr = res.metrics["transform"]
        run.table(["lambda", "empirical", "analytic", "combined_se"],
                  zip(tr["lambda"], tr["empirical"], tr["analytic"], tr["combined_se"]))
    else:
        res = verify_strong_proxy(m, ens, t_end, n_paths)
    if theorem != "weak":
        exact = mean_counts(m, grid, ens.sites)[:, 0]
        run.table(["t", "survival", "mean_total", "var_total", "exact_mean_total"],
                  zip(grid, ens.survival, ens.mean_total, ens.var_total, exact))
    out = {"theorem": theorem, "verdict": res.verdict, "check": res.to_dict(),
           "coverage": ens.coverage(), "replicates": R, "t_end": t_end, **extra}
    print(f"{theorem}: {res.verdict}", file=sys.stderr)
    return out, "ok"


COMMANDS = {
    "classify": cmd_classify, "malthus": cmd_malthus, "extinction": cmd_extinction,
    "taboo": cmd_taboo, "phi": cmd_phi, "simulate": cmd_simulate, "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", required=True, help="JSON model file")
    common.add_argument("--out", help="JSON report path (default: stdout)")
    common.add_argument("--csv", help="CSV table path (default: next to --out)")
    common.add_argument("--tol", type=float)
    common.add_argument("--query-states", help="comma-separated state labels")
    common.add_argument("--threads", type=int,
                        help="worker threads (default: $CATBRANCH_THREADS or 1)")

    sim = _Parser(add_help=False)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--t-end", type=float)
    sim.add_argument("--t-grid", help="number of points on [0, t-end] or a comma-separated list")
    sim.add_argument("--max-population", type=int,
                     help="population cap per path (default 1e6; 1e8 for --theorem strong)")
    sim.add_argument("--max-events", type=int, default=Caps().max_events)

    p = _Parser(prog="catbranch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("classify", parents=[common], help="criticality class, nu and c(x)")
    sub.add_parser("malthus", parents=[common], help="Malthusian parameter")
    sub.add_parser("extinction", parents=[common], help="global and local extinction probabilities")
    t = sub.add_parser("taboo", parents=[common], help="taboo passage transforms")
    t.add_argument("--target", required=True)
    t.add_argument("--taboo", help="comma-separated taboo states")
    t.add_argument("--lambdas", help="comma-separated lambda values (default 0)")
    ph = sub.add_parser("phi", parents=[common], help="Laplace transform of the limit variable")
    ph.add_argument("--lambda-max", type=float, default=1e3)
    s = sub.add_parser("simulate", parents=[common, sim], help="one simulated path")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--events", action="store_true", help="write the event log of the reference engine")
    v = sub.add_parser("verify", parents=[common, sim], help="Monte Carlo verdicts")
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--theorem", choices=["q", "Q", "strong", "weak"], required=True)
    v.add_argument("--lambda-max", type=float, default=1e3)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_INVALID
        os.environ["CATBRANCH_THREADS"] = str(args.threads)
    try:
        model = load_model(args.model)
    except OSError as exc:
        print(f"error: cannot read model file: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ModelError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    run = _Run(args, model)
    code = EXIT_OK
    try:
        result, status = COMMANDS[args.command](run)
        if status != "ok":
            code = EXIT_NUMERIC
    except (UsageError, NotSupercriticalError, HypothesisError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, FixedPointError, PhiConvergenceError) as exc:
        result, status, code = {"error": str(exc)}, "not_converged", EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
    text = json.dumps(run.report(result, status), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
