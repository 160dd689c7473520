"""Command-line front end: run, sweep, complexity and validate."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .blocks import InfeasibleError
from .evaluation import complexity_table, jain_of, parse_grid, sweep_lmax
from .orchestrator import RunOptions, run_approach
from .scenario import ConfigError, ScenarioConfig, generate_scenario, validate_scenario

log = logging.getLogger(__name__)

ENV_PREFIX = "IOTPRICE_"
EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3
APPROACH_NAMES = {"weight-one": "weight_one", "max-min": "max_min", "conventional": "conventional"}
MINIMA_KEYS = ("isp_total", "user_total", "sens_total", "inp_total", "inp_each", "isp_each")

RUN_COLUMNS = ("iteration", "objective", "phi_isp", "phi_inp", "phi_sens", "phi_user", "jain")
ALLOC_COLUMNS = ("variable", "i", "j", "k", "value")
SWEEP_COLUMNS = ("approach", "l_max", "phi_isp", "phi_inp", "phi_sens", "phi_user", "sum", "jain",
                 "iters", "ms", "status")
COMPLEXITY_COLUMNS = ("approach", "block", "delta", "ip_iterations")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iotprice", description="Joint pricing and SCMA resource allocation for IoT networks.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, approach=True):
        sp.add_argument("--scenario", default=_env("scenario"), help="scenario config file (INI)")
        sp.add_argument("--seed", type=int, default=int(_env("seed", 0)))
        sp.add_argument("--out", default=_env("out", "."), help="output directory")
        sp.add_argument("--max-outer-iters", type=int, default=int(_env("max_outer_iters", 50)))
        sp.add_argument("--tol", type=float, default=float(_env("tol", 1e-4)))
        sp.add_argument("--weights", default=_env("weights"),
                        help="group weights isp,user,inp,sens (comma list)")
        sp.add_argument("--central-scalarization", choices=("max-min", "weight-one"),
                        default=_env("central_scalarization", "max-min"))
        sp.add_argument("--minima", default=_env("minima"),
                        help="conventional floors as key=value list, keys: " + ", ".join(MINIMA_KEYS))

    run = sub.add_parser("run", help="run one approach")
    common(run)
    run.add_argument("--approach", choices=tuple(APPROACH_NAMES), default=_env("approach"),
                     required=_env("approach") is None)

    sw = sub.add_parser("sweep", help="sweep the price cap")
    common(sw)
    sw.add_argument("--sweep", default=_env("sweep", "lmax:0.1:1.0:5"), help="lmax:<start>:<stop>:<steps>")
    sw.add_argument("--approach", action="append", choices=tuple(APPROACH_NAMES),
                    help="restrict to these approaches (repeatable); default all three")
    sw.add_argument("--no-timing", action="store_true", help="write 0 in the ms column")

    cx = sub.add_parser("complexity", help="constraint counts per approach and block")
    cx.add_argument("--scenario", default=_env("scenario"))
    cx.add_argument("--out", default=_env("out", "."))
    cx.add_argument("--t0", type=float, default=1.0)
    cx.add_argument("--stop", type=float, default=1e-8)
    cx.add_argument("--growth", type=float, default=10.0)

    va = sub.add_parser("validate", help="check a scenario file")
    va.add_argument("--scenario", default=_env("scenario"))
    va.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load(args):
    try:
        cfg = ScenarioConfig.from_file(args.scenario) if args.scenario else ScenarioConfig()
        s = generate_scenario(cfg, getattr(args, "seed", 0))
    except (OSError, ConfigError) as exc:
        raise UsageError(f"cannot load scenario: {exc}") from None
    weights = getattr(args, "weights", None)
    if weights:
        try:
            w = [float(x) for x in weights.split(",")]
        except ValueError:
            raise UsageError(f"--weights must be four numbers, got {weights!r}") from None
        if len(w) != 4:
            raise UsageError(f"--weights must be four numbers (isp,user,inp,sens), got {len(w)}")
        s = s.with_weights(isp=w[0], user=w[1], inp=w[2], sens=w[3])
    return s


def _options(args) -> RunOptions:
    if args.max_outer_iters < 1:
        raise UsageError("--max-outer-iters must be at least 1")
    if args.tol <= 0:
        raise UsageError("--tol must be positive")
    return RunOptions(max_iter=args.max_outer_iters, rel_tol=args.tol,
                      phase_two=APPROACH_NAMES[args.central_scalarization])


def _minima(text):
    if not text:
        return None
    out = {}
    for item in text.split(","):
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in MINIMA_KEYS or not val:
            raise UsageError(f"bad --minima entry {item!r}; keys are {', '.join(MINIMA_KEYS)}")
        try:
            out[key] = float(val)
        except ValueError:
            raise UsageError(f"bad --minima value in {item!r}") from None
    missing = set(MINIMA_KEYS) - set(out)
    if missing:
        raise UsageError(f"--minima is missing {', '.join(sorted(missing))}")
    return out


def _num(x) -> str:
    return repr(float(x))


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def write_run_report(path: Path, rep) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for e in rep.trace:
            if e.totals is None:
                continue
            try:
                j = jain_of(e.totals)
            except ValueError:
                j = float("nan")
            w.writerow([e.iteration, _num(e.objective), _num(e.totals["isp"]), _num(e.totals["inp"]),
                        _num(e.totals["sens"]), _num(e.totals["user"]), _num(j)])


def write_allocation(path: Path, a) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALLOC_COLUMNS)
        for name in ("rho_dl", "p_dl", "rho_ul", "p_ul", "alpha"):
            arr = getattr(a, name)
            for idx in np.ndindex(arr.shape):
                pad = list(idx) + [""] * (3 - len(idx))
                w.writerow([name, *pad, _num(arr[idx])])
        for name in a.prices.FAMILIES:
            arr = np.atleast_1d(getattr(a.prices, name))
            for idx in np.ndindex(arr.shape):
                pad = list(idx) + [""] * (3 - len(idx))
                w.writerow([f"L_{name}", *pad, _num(arr[idx])])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    s = _load(args)
    opts = _options(args)
    approach = APPROACH_NAMES[args.approach]
    kw = {"minima": _minima(args.minima)} if approach == "conventional" else {}
    out = _outdir(args.out)
    try:
        rep = run_approach(s, approach, opts, **kw)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    write_run_report(out / "run_report.csv", rep)
    write_allocation(out / "allocation.csv", rep.allocation)
    tot = rep.totals
    print(f"{approach}: objective {rep.objective:.6g} after {rep.iterations} iterations "
          f"(converged={rep.converged}, feasible={rep.feasible})")
    print("  " + "  ".join(f"{k}={v:.6g}" for k, v in tot.items()))
    for wmsg in rep.warnings:
        log.info(wmsg)
    if not rep.feasible:
        print(f"final allocation violates: {rep.constraints.summary()}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if not rep.converged:
        print("did not converge within the iteration limit", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        _, grid = parse_grid(args.sweep)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    s = _load(args)
    opts = _options(args)
    approaches = tuple(APPROACH_NAMES[a] for a in args.approach) if args.approach else tuple(APPROACH_NAMES.values())
    kw = {"minima": _minima(args.minima)} if "conventional" in approaches and args.minima else {}
    out = _outdir(args.out)
    res = sweep_lmax(s, grid, approaches, opts, **kw)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in res.rows:
            ms = 0 if args.no_timing else int(round(r.ms))
            w.writerow([r.approach, _num(r.l_max), _num(r.phi_isp), _num(r.phi_inp), _num(r.phi_sens),
                        _num(r.phi_user), _num(r.total), _num(r.jain), r.iterations, ms, r.status])
    print(f"{len(res.rows)} cells, {res.succeeded} succeeded -> {out / 'sweep.csv'}")
    return EXIT_OK if res.succeeded else EXIT_SOLVER


def cmd_complexity(args) -> int:
    s = _load(argparse.Namespace(scenario=args.scenario, seed=0))
    out = _outdir(args.out)
    cells = complexity_table(s.topology, args.t0, args.stop, args.growth)
    print(f"{'approach':<14}{'block':<8}{'delta':>10}{'ip iters':>10}")
    for c in cells:
        print(f"{c.approach:<14}{c.block:<8}{c.delta:>10}{c.iterations:>10.2f}")
    with open(out / "complexity.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPLEXITY_COLUMNS)
        for c in cells:
            w.writerow([c.approach, c.block, c.delta, _num(c.iterations)])
    return EXIT_OK


def cmd_validate(args) -> int:
    s = _load(args)
    rep = validate_scenario(s)
    print(str(rep))
    return EXIT_OK if rep.ok else EXIT_USAGE


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "complexity": cmd_complexity, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"iotprice: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"iotprice: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
