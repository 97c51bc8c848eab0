"""``cpt`` command line: test, ci, order, simulate, replay, example.

Exit codes: 0 done, 2 precondition or input violation, 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import traceback
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .ci import IntervalError, grid_interval, invert
from .construction import ConstructionError, ShiftPlan, VanishingSignalWarning
from .hypothesis import ContrastSpec, HypothesisError, reduce
from .io import (DataError, Manifest, dump_json, read_contrast, read_permutation,
                 read_table, sha256_file, validate, write_permutation)
from .ordering import OrderingConfig, identity_ordering, optimize
from .rank_test import ConservativeLevelWarning, cpt, default_m

log = logging.getLogger("cpt")

USAGE_ERRORS = (DataError, ConstructionError, HypothesisError, IntervalError)


class Problem:
    """Parsed data file split into outcome, design and hypothesis."""

    def __init__(self, args):
        table = read_table(args.data)
        outcome = args.outcome or table.columns[0]
        self.y = table.column(outcome)
        self.design_names = [c for c in table.columns if c != outcome]
        if not self.design_names:
            raise DataError(f"{args.data}: no design columns besides {outcome!r}")
        self.X = table.values[:, [table.columns.index(c) for c in self.design_names]]
        self.outcome = outcome
        target = getattr(args, "target", None) or self.design_names[0]
        if Path(target).is_file():
            R = read_contrast(target, len(self.design_names))
            self.spec = ContrastSpec(contrast=R)
            self.coef = None
        else:
            if target not in self.design_names:
                raise DataError(f"--target {target!r} is neither a design column "
                                f"({', '.join(self.design_names)}) nor a contrast file")
            self.coef = self.design_names.index(target)
            self.spec = ContrastSpec.coefficient(self.coef)
        self.target = target
        self.inputs = [args.data] + ([target] if self.coef is None else [])

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _resolve_m(args) -> int:
    if args.m is not None:
        if args.m < 1:
            raise DataError("--m must be >= 1")
        return args.m
    try:
        return default_m(args.alpha)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _ordering_config(args) -> OrderingConfig:
    try:
        return OrderingConfig(population_size=args.population, sample_budget=args.budget,
                              seed=args.seed)
    except ValueError as exc:
        raise DataError(f"ordering configuration: {exc}") from None


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _params(args) -> dict:
    skip = {"func"}
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items()) if k not in skip}


def _check_n(prob: Problem, m: int, r: int):
    need = prob.p * m - (r - 1) if r > 1 else prob.p * m
    if prob.n < need:
        cond = "n ≥ pm" if r == 1 else "n ≥ pm - r + 1"
        raise ConstructionError(
            f"precondition violated: {cond} required, got n={prob.n}, p={prob.p}, m={m}"
            + (f", r={r}" if r > 1 else ""))


def cmd_test(args, argv) -> int:
    prob = Problem(args)
    m = _resolve_m(args)
    r = prob.spec.r
    _check_n(prob, m, r)
    out = _outdir(args)
    man = Manifest("test", argv, _params(args), args.seed, prob.inputs)
    preorder = None
    if args.preorder:
        preorder = read_permutation(args.preorder, prob.n)
        man.inputs.append(str(args.preorder))
    res = cpt(prob.y, prob.X, prob.spec, alpha=args.alpha, m=m, ordering=args.ordering,
              config=_ordering_config(args), preorder=preorder)
    st = res.stats
    trace_path = perm_path = None
    if res.ordering.method in ("ga", "search"):
        trace_path = res.ordering.write_trace(out / "ordering_trace.csv")
        man.outputs.append(str(trace_path))
    if res.ordering.method != "identity":
        perm_path = write_permutation(res.ordering.permutation, out / "permutation.txt")
        man.outputs.append(str(perm_path))
    k = round(1 / args.alpha)
    report = {
        "n": prob.n, "p": prob.p, "r": r, "m": m, "alpha": args.alpha,
        "target": prob.target, "pvalue": st.pvalue, "rank": st.rank0,
        "reject": st.reject, "objective": res.system.objective,
        "statistics": st.S, "centered": st.Stilde,
        "vanishing_signal": res.system.vanishing,
        "conservative": bool(abs(1 / args.alpha - k) < 1e-9 and (m + 1) % k != 0),
        "ordering": {"method": res.ordering.method, "objective": res.ordering.objective,
                     "evaluations": res.ordering.evaluations,
                     "trace_path": trace_path.name if trace_path else None,
                     "permutation_path": perm_path.name if perm_path else None},
    }
    validate(report, "test_report")
    rpath = dump_json(report, out / "test_report.json")
    man.outputs.append(str(rpath))
    man.write(out / "test.manifest.json")
    print(f"cyclic permutation test  n={prob.n} p={prob.p} r={r} m={m} alpha={args.alpha}")
    print(f"  target      {prob.target}")
    print(f"  ordering    {res.ordering.method} ({res.ordering.evaluations} evaluations)")
    print(f"  O*(X)       {res.system.objective:.10g}")
    print(f"  rank        {st.rank0} of {m + 1}")
    print(f"  p-value     {st.pvalue:.10g}")
    print(f"  decision    {'reject' if st.reject else 'do not reject'} H0")
    if trace_path:
        print(f"  trace       {trace_path}")
    print(f"  report      {rpath}")
    return 0


def _ols_estimate(prob: Problem, intercept: bool) -> float:
    A = np.column_stack([np.ones(prob.n), prob.X]) if intercept else prob.X
    coef = np.linalg.lstsq(A, prob.y, rcond=None)[0]
    return float(coef[prob.coef + (1 if intercept else 0)])


def cmd_ci(args, argv) -> int:
    prob = Problem(args)
    if prob.coef is None:
        raise DataError("ci needs --target to name a single design column")
    m = _resolve_m(args)
    _check_n(prob, m, 1)
    out = _outdir(args)
    man = Manifest("ci", argv, _params(args), args.seed, prob.inputs)
    res = cpt(prob.y, prob.X, prob.coef, alpha=args.alpha, m=m, ordering=args.ordering,
              config=_ordering_config(args))
    perm = res.ordering.permutation
    inv = invert(prob.y[perm], prob.X[perm], prob.coef, args.alpha, m, res.system)
    lo, hi = inv.interval
    grid = None
    if args.grid_check:
        from .rank_test import statistics

        g = grid_interval(statistics(prob.y[perm], res.system), args.alpha, inv.delta)
        grid = {"lower": g[0], "upper": g[1], "points": 10_000}
    report = {
        "target": prob.target, "alpha": args.alpha, "m": m, "level": inv.level,
        "lower": lo, "upper": hi, "bounded": inv.bounded, "delta": inv.delta,
        "breakpoints": inv.breakpoint_count,
        "components": [[a / inv.delta, b / inv.delta] for a, b in inv.components],
        "disconnected": inv.disconnected,
        "ols_estimate": _ols_estimate(prob, not args.no_intercept),
        "grid_check": grid,
    }
    validate(report, "ci_report")
    rpath = dump_json(report, out / "ci_report.json")
    man.outputs.append(str(rpath))
    man.write(out / "ci.manifest.json")
    level = f"{100 * inv.level:g}%"
    if inv.bounded:
        print(f"{level} interval for {prob.target}: [{lo:.10g}, {hi:.10g}]")
    else:
        print(f"{level} interval for {prob.target}: unbounded (alpha < 1/(m+1))")
    if inv.disconnected:
        print("warning: acceptance set is disconnected; reporting its hull", file=sys.stderr)
    print(f"  report      {rpath}")
    return 0


def cmd_order(args, argv) -> int:
    prob = Problem(args)
    m = _resolve_m(args)
    r = prob.spec.r
    _check_n(prob, m, r)
    out = _outdir(args)
    man = Manifest("order", argv, _params(args), args.seed, prob.inputs)
    Xt = reduce(prob.X, prob.spec).X_tilde
    plan = ShiftPlan(prob.n, m)
    sol = optimize(Xt, plan, r, None, method=args.method, config=_ordering_config(args))
    ident = identity_ordering(Xt, plan, r).objective
    ppath = write_permutation(sol.permutation, out / "permutation.txt")
    tpath = sol.write_trace(out / "ordering_trace.csv")
    report = {"method": sol.method, "objective": sol.objective, "identity_objective": ident,
              "evaluations": sol.evaluations, "trace_length": len(sol.trace),
              "permutation_path": ppath.name, "trace_path": tpath.name,
              "n": prob.n, "p": prob.p, "m": m}
    validate(report, "order_report")
    rpath = dump_json(report, out / "order_report.json")
    man.outputs.extend([str(ppath), str(tpath), str(rpath)])
    man.write(out / "order.manifest.json")
    print(f"{sol.method}: O* = {sol.objective:.10g} (identity {ident:.10g}) "
          f"after {sol.evaluations} evaluations")
    print(f"  permutation {ppath}")
    print(f"  trace       {tpath}")
    return 0


def _write_csv(rows: list[dict], path: Path) -> Path:
    with path.open("w", newline="") as fh:
        if not rows:
            return path
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})
    return path


def cmd_simulate(args, argv) -> int:
    from .simulation import Scenario, run

    path = Path(args.scenario)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    validate(cfg, "scenario")
    try:
        sc = Scenario.from_dict(cfg)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if args.full_scale:
        sc = sc.full_scale()
    out = _outdir(args)
    man = Manifest("simulate", argv, _params(args), sc.seed, [path])
    report = run(sc, n_jobs=args.threads)
    data = report.to_json()
    validate(data, "sim_summary")
    files = [_write_csv(report.summary(), out / "sim_summary.csv"),
             _write_csv(report.cell_rows(), out / "sim_cells.csv"),
             dump_json(data, out / "sim_report.json")]
    man.outputs.extend(str(f) for f in files)
    man.write(out / "simulate.manifest.json")
    for row in report.summary():
        print(f"{row['method']:<13} s={row['s']:<4g} rate={row['rate']:.4f} (se {row['se']:.4f})")
    print(f"  summary     {files[0]}")
    return 0


def cmd_replay(args, argv) -> int:
    """Re-run a manifest and compare output hashes."""
    man = json.loads(Path(args.manifest).read_text())
    code = main(man["argv"])
    if code != 0:
        return code
    bad = [o["path"] for o in man["outputs"] if sha256_file(o["path"]) != o["sha256"]]
    for b in bad:
        print(f"mismatch: {b}", file=sys.stderr)
    print("replay: outputs identical" if not bad else f"replay: {len(bad)} outputs differ")
    return 1 if bad else 0


def cmd_example(args, argv) -> int:
    from .data import example_path

    dest = Path(args.dest)
    shutil.copyfile(example_path(), dest)
    print(dest)
    return 0


def _add_data_args(sp, target_help="design column name, or a p x r contrast CSV"):
    sp.add_argument("data", help="CSV with header; outcome column first unless --outcome")
    sp.add_argument("--outcome", help="outcome column (default: first column)")
    sp.add_argument("--target", help=target_help)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--m", type=int, default=None, help="statistics minus one (default 1/alpha - 1)")
    sp.add_argument("--no-intercept", action="store_true",
                    help="omit the intercept from reported least-squares estimates")
    sp.add_argument("--out", default="cpt_output", help="output directory")


def _add_ordering_args(sp, default="none", flag="--ordering"):
    sp.add_argument(flag, choices=["ga", "search", "none"], default=default)
    sp.add_argument("--budget", type=int, default=1000, help="objective evaluations")
    sp.add_argument("--population", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"cpt {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("test", help="cyclic permutation test of a linear hypothesis")
    _add_data_args(sp)
    _add_ordering_args(sp)
    sp.add_argument("--preorder", help="permutation file (1-based row indices) to use as is")
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("ci", help="confidence interval for one coefficient")
    _add_data_args(sp, target_help="design column name")
    _add_ordering_args(sp)
    sp.add_argument("--grid-check", action="store_true",
                    help="also report a 10^4-point grid approximation")
    sp.set_defaults(func=cmd_ci)

    sp = sub.add_parser("order", help="search a row pre-ordering")
    _add_data_args(sp)
    _add_ordering_args(sp, default="ga", flag="--method")
    sp.set_defaults(func=cmd_order)

    sp = sub.add_parser("simulate", help="Monte Carlo size/power study")
    sp.add_argument("scenario", help="scenario JSON file")
    sp.add_argument("--full-scale", action="store_true",
                    help="n=1000, 3000 reps, 50 design copies, 10^4-sample orderings")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker processes (default: $CPT_NUM_THREADS or 1)")
    sp.add_argument("--out", default="cpt_output")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("replay", help="re-run a manifest and verify its outputs")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("example", help="write the bundled example dataset")
    sp.add_argument("dest")
    sp.set_defaults(func=cmd_example)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "method", None) == "none" and args.func is cmd_order:
        args.method = "identity"
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConservativeLevelWarning)
            warnings.simplefilter("always", VanishingSignalWarning)
            code = args.func(args, argv)
        for w in caught:
            if issubclass(w.category, (ConservativeLevelWarning, VanishingSignalWarning)):
                print(f"warning: {w.message}", file=sys.stderr)
        return code
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 1
