"""Command-line entry point.

Exit codes: 0 on success, 1 when a solver fails or a check does not pass
(a JSON error object goes to standard error), 2 on usage errors.
"""

import argparse
import csv
import json
import sys

from . import io
from .coordination import CoordinationInstance, coordinate
from .cqkp import KnapsackInstance, bps_solve, knapsack_kkt_residuals
from .errors import DomainError, SolverError
from .mcqkp import M_MAX_DEFAULT, hps_solve
from .parametric import LocalProblem
from .pwq import PwqScalar, pwq_validate

__all__ = ["main", "build_parser"]

TOL_FEAS = 1e-7
TOL_CONT = 1e-8


class UsageError(Exception):
    pass


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError("tolerances must be positive")
    return v


def _m_list(text):
    try:
        vals = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fleet list: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty fleet list")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--tol-feas", type=_positive, default=TOL_FEAS,
                        help="relative tolerance for coupling residual checks")
    common.add_argument("--tol-cont", type=_positive, default=TOL_CONT,
                        help="relative continuity/convexity tolerance used by validate")
    common.add_argument("--config", help="JSON file whose keys provide defaults for the flags")

    p = _Parser(prog="sosmpc", description="Knapsack coordination solvers and microgrid study.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("solve-cqkp", parents=[common], help="one coupling row, breakpoint search")
    s.add_argument("input")
    s.add_argument("--out", default="-")

    s = sub.add_parser("solve-mcqkp", parents=[common], help="several coupling rows, hyperplane search")
    s.add_argument("input")
    s.add_argument("--out", default="-")
    s.add_argument("--mmax", type=int, default=M_MAX_DEFAULT)
    s.add_argument("--trace", nargs="?", const="-", default=None, metavar="CSV",
                   help="write per-round statistics as CSV (default: standard output)")

    s = sub.add_parser("coordinate", parents=[common], help="coordinate PWQ slices")
    s.add_argument("input")
    s.add_argument("--out", default="-")
    s.add_argument("--mmax", type=int, default=M_MAX_DEFAULT)

    s = sub.add_parser("simulate", parents=[common], help="closed-loop microgrid simulation")
    s.add_argument("--m", type=int, default=30)
    s.add_argument("--case", type=int, choices=(1, 2), default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=168)
    s.add_argument("--level", type=_positive, default=0.6, help="demand as a fraction of capacity")
    s.add_argument("--soc-ref", type=float, default=0.5)
    s.add_argument("--out", default="-")
    s.add_argument("--figures", metavar="DIR")

    s = sub.add_parser("benchmark", parents=[common], help="hierarchical vs centralized timing")
    s.add_argument("--m-list", type=_m_list, default=[30, 60, 120])
    s.add_argument("--case", type=int, choices=(1, 2), default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--out", default="-")
    s.add_argument("--figures", metavar="DIR")

    s = sub.add_parser("validate", parents=[common], help="check a PWQ, knapsack, coordination or local-problem file")
    s.add_argument("input")
    s.add_argument("--out", default="-")
    return p


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = io.load(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}")
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - known - {"help", "config"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "m_list" in cfg:
            cfg["m_list"] = _m_list(",".join(str(v) for v in cfg["m_list"])
                                    if isinstance(cfg["m_list"], list) else cfg["m_list"])
        for key in ("tol_feas", "tol_cont", "level"):
            if key in cfg and not (isinstance(cfg[key], (int, float)) and cfg[key] > 0):
                raise UsageError(f"{key} must be positive")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _load(path):
    try:
        return io.load(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}")


def _check_residual(res, targets, tol, what="coupling"):
    for r, b in zip(res, targets):
        if r > tol * max(1.0, abs(b)):
            raise _CheckFailed({"error": "residual", "message": f"{what} residual {r!r} exceeds tolerance"})


class _CheckFailed(Exception):
    def __init__(self, payload):
        super().__init__(payload["message"])
        self.payload = payload


def _knapsack(path):
    try:
        return KnapsackInstance.from_dict(_load(path))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed knapsack instance: {exc}")


def cmd_solve_cqkp(args):
    inst = _knapsack(args.input)
    if inst.m != 1:
        raise UsageError("solve-cqkp takes one coupling row; use solve-mcqkp")
    sol = bps_solve(inst)
    kkt = knapsack_kkt_residuals(inst, sol.x, sol.lam)
    _check_residual([kkt["coupling"]], inst.c, args.tol_feas)
    io.dump({"x": sol.x, "lambda": sol.lam, "value": sol.value, "kkt": kkt}, io.output_path(args.out))


def cmd_solve_mcqkp(args):
    inst = _knapsack(args.input)
    sol = hps_solve(inst, mmax=args.mmax, trace=args.trace is not None)
    kkt = knapsack_kkt_residuals(inst, sol.x, sol.lam)
    _check_residual([kkt["coupling"]], [max([1.0] + [abs(c) for c in inst.c])], args.tol_feas)
    io.dump({"x": sol.x, "lambda": sol.lam, "value": sol.value, "kkt": kkt,
             "rounds": sol.stats.get("rounds"), "queries": sol.stats.get("queries")},
            io.output_path(args.out))
    if args.trace is not None:
        rows = sol.stats.get("trace", [])
        path = io.output_path(args.trace)
        fh = sys.stdout if path == "-" else open(path, "w", newline="")
        try:
            w = csv.writer(fh)
            w.writerow(["round", "unknown", "resolved", "queries"])
            for k, r in enumerate(rows):
                w.writerow([k, r["unknown"], r["resolved"], r["queries"]])
        finally:
            if fh is not sys.stdout:
                fh.close()


def cmd_coordinate(args):
    data = _load(args.input)
    try:
        inst = CoordinationInstance.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed coordination instance: {exc}")
    res = coordinate(inst, mmax=args.mmax)
    _check_residual(res.residuals, [c.b for c in inst.couplings], args.tol_feas)
    io.dump({"theta": res.theta, "value": res.value, "lambda": res.lam, "slack": res.slack,
             "residuals": res.residuals}, io.output_path(args.out))


def cmd_simulate(args):
    from .microgrid import simulate
    log = simulate(args.m, args.seed, args.case, steps=args.steps, level=args.level,
                   soc_ref=args.soc_ref, soc0=args.soc_ref)
    if log.max_residual() > args.tol_feas:
        raise _CheckFailed({"error": "residual",
                            "message": f"coupling residual {log.max_residual()!r} exceeds tolerance"})
    path = io.output_path(args.out)
    if path == "-":
        w = csv.writer(sys.stdout)
        from .microgrid import LOG_COLUMNS
        w.writerow(LOG_COLUMNS)
        for row in log.rows():
            w.writerow(["" if v is None else v for v in row])
    else:
        log.write_csv(path)
    if args.figures:
        from .plotting import plot_simulation
        plot_simulation(log, io.output_path(args.figures))


def cmd_benchmark(args):
    from .microgrid import BENCH_COLUMNS, benchmark
    if args.repetitions < 1:
        raise UsageError("repetitions must be at least 1")
    report = benchmark(args.m_list, args.seed, args.case, repetitions=args.repetitions)
    path = io.output_path(args.out)
    if path == "-":
        w = csv.DictWriter(sys.stdout, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(report.rows)
    else:
        report.write_csv(path)
    if args.figures:
        from .plotting import plot_benchmark
        plot_benchmark(report, io.output_path(args.figures))


def cmd_validate(args):
    data = _load(args.input)
    if not isinstance(data, dict):
        raise UsageError("expected a JSON object")
    if "breakpoints" in data:
        report = pwq_validate(PwqScalar.from_dict(data), rel_tol=args.tol_cont)
        out = dict(report.to_dict(), kind="pwq")
    elif "slices" in data:
        viol = []
        for i, s in enumerate(data["slices"]):
            r = pwq_validate(PwqScalar.from_dict(s), rel_tol=args.tol_cont)
            viol += [dict(v.to_dict(), slice=i) for v in r.violations]
        try:
            CoordinationInstance.from_dict(data)
        except ValueError as exc:
            viol.append({"invariant": "shape", "location": None, "detail": str(exc)})
        out = {"ok": not viol, "violations": viol, "kind": "coordination"}
    elif "d" in data:
        try:
            KnapsackInstance.from_dict(data)
            viol = []
        except (ValueError, SolverError) as exc:
            viol = [{"invariant": "knapsack", "location": None, "detail": str(exc)}]
        out = {"ok": not viol, "violations": viol, "kind": "knapsack"}
    elif "Qpp" in data:
        try:
            LocalProblem.from_dict(data)
            viol = []
        except ValueError as exc:
            viol = [{"invariant": "local-problem", "location": None, "detail": str(exc)}]
        out = {"ok": not viol, "violations": viol, "kind": "local-problem"}
    else:
        raise UsageError("unrecognised file: expected a PWQ, knapsack, coordination or local problem")
    io.dump(out, io.output_path(args.out))
    return 0 if out["ok"] else 1


COMMANDS = {"solve-cqkp": cmd_solve_cqkp, "solve-mcqkp": cmd_solve_mcqkp, "coordinate": cmd_coordinate,
            "simulate": cmd_simulate, "benchmark": cmd_benchmark, "validate": cmd_validate}


def _error(payload):
    sys.stderr.write(json.dumps(io.to_plain(payload)) + "\n")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
        return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        sys.stderr.write(f"sosmpc: error: {exc}\n")
        return 2
    except SystemExit as exc:      # --help
        return exc.code if isinstance(exc.code, int) else 0
    except _CheckFailed as exc:
        _error(exc.payload)
        return 1
    except (SolverError, DomainError) as exc:
        payload = exc.to_dict()
        step = getattr(exc, "step", None)
        if step is not None:
            payload["step"] = step
        _error(payload)
        return 1
    except ValueError as exc:
        sys.stderr.write(f"sosmpc: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
