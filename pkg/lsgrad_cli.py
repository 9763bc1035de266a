#!/usr/bin/env python3
"""
lsgrad-dtn CLI entrypoint.

Usage:
  python lsgrad_cli.py grid       --grid disk:64:1.0 --out grid.json
  python lsgrad_cli.py solve      --grid G --h H.csv --out DIR
  python lsgrad_cli.py dtn eval   --grid G --h H.csv [--out DIR]
  python lsgrad_cli.py resolvent  --grid G --g G.csv --lambda 0.5 --out DIR
  python lsgrad_cli.py evolve     --grid G --h0 H.csv --tau 0.05 --t-end 5 [--f linear:0.5] --out DIR
  python lsgrad_cli.py plap solve    --grid G --g G.csv --alpha 1 --p 1.5 --out DIR
  python lsgrad_cli.py plap continue --grid G --g G.csv --schedule 1.8,1.4,1.2 --out DIR
  python lsgrad_cli.py oracle     --grid G --h H.csv [--exhaustive] --out DIR
  python lsgrad_cli.py experiment --config config/recipes/sign_data.toml --out DIR
  python lsgrad_cli.py verify     [--grid square:8] --out DIR

Grids are a JSON file or KIND:N[:SIZE]. Boundary data are a field file
(.csv or binary) or one of sign_x, random, disk_example, const:C.

Exit codes: 0 success, 1 usage or input error, 2 a solve did not converge,
4 verify found a failed property.
"""

import argparse
import os
import sys

# Ensure project root is on sys.path
_PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
if _PROJECT_ROOT not in sys.path:
    sys.path.insert(0, _PROJECT_ROOT)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2
EXIT_VERIFY_FAILED = 4


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------

def _grid(spec: str):
    from errors import InvalidArgument
    from field_io import load_grid
    from grid import build_grid

    if os.path.exists(spec):
        return load_grid(spec)
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise InvalidArgument(f"--grid must be a file or KIND:N[:SIZE], got {spec!r}")
    try:
        n = int(parts[1])
        size = float(parts[2]) if len(parts) == 3 else 1.0
    except ValueError:
        raise InvalidArgument(f"--grid: cannot parse {spec!r}")
    return build_grid(parts[0], n, size)


def _boundary(grid, spec: str, seed: int):
    import numpy as np

    from errors import InvalidArgument
    from field_io import load_field
    from lab import random_boundary, sign_x_data
    from oracle import disk_example_data

    if spec == "sign_x":
        return sign_x_data(grid)
    if spec == "random":
        return random_boundary(grid, np.random.default_rng(seed))
    if spec == "disk_example":
        return disk_example_data(grid).values
    if spec.startswith("const:"):
        try:
            return np.full(grid.num_segments, float(spec.split(":", 1)[1]))
        except ValueError:
            raise InvalidArgument(f"cannot parse constant in {spec!r}")
    if not os.path.exists(spec):
        raise InvalidArgument(f"boundary data {spec!r} is neither a file nor a known generator")
    return load_field(spec)


def _nemytskii(spec: str):
    from errors import InvalidArgument
    from evolution import NemytskiiSpec
    from field_io import load_json

    if spec == "zero":
        return NemytskiiSpec.zero()
    kind, _, arg = spec.partition(":")
    if kind == "linear":
        try:
            return NemytskiiSpec.linear(float(arg))
        except ValueError:
            raise InvalidArgument(f"--f linear needs a number, got {arg!r}")
    if kind == "table":
        data = load_json(arg)
        return NemytskiiSpec.table(data.get("knots", ()), data.get("values", ()), data.get("omega"))
    raise InvalidArgument(f"--f must be zero, linear:OMEGA or table:FILE, got {spec!r}")


def _solver_options(args):
    from lab_config import load_defaults, solver_options
    return solver_options({}, load_defaults(), seed=args.seed, tol=args.tol)


def _out_dir(args) -> str:
    from errors import InvalidArgument
    if not args.out:
        raise InvalidArgument("--out is required for this command")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _finish(converged: bool, message: str) -> None:
    print(message)
    if not converged:
        print("WARNING: solver did not reach its tolerance", file=sys.stderr)
        sys.exit(EXIT_NOT_CONVERGED)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_grid(args):
    """grid: build a grid and write its JSON layout"""
    from field_io import save_grid

    grid = _grid(args.grid)
    if args.out:
        save_grid(args.out, grid)
    s = grid.summary()
    print(f"OK | kind={s['kind']} | n={s['n']} | nodes={s['nodes']} | edges={s['edges']} | "
          f"segments={s['segments']} | perimeter={s['perimeter']:.6g}")


def cmd_solve(args):
    """solve: relaxed Dirichlet problem, writes u/z/g and report.json"""
    from tvmin import save_solution, solve_relaxed_dirichlet

    grid = _grid(args.grid)
    h = _boundary(grid, args.h, args.seed)
    sol = solve_relaxed_dirichlet(grid, h, _solver_options(args))
    save_solution(_out_dir(args), grid, h, sol)
    _finish(sol.converged, f"OK | energy={sol.primal_energy:.10g} | gap={sol.gap:.3e} | "
                           f"iters={sol.iterations}")


def cmd_dtn_eval(args):
    """dtn eval: phi(h) and a co-normal selection g"""
    from field_io import save_field_csv, save_json

    from dtn import evaluate

    grid = _grid(args.grid)
    h = _boundary(grid, args.h, args.seed)
    record = evaluate(grid, h, _solver_options(args))
    if args.out:
        out = _out_dir(args)
        save_field_csv(os.path.join(out, "g.csv"), record.g.values)
        save_json(os.path.join(out, "report.json"), record.to_report(grid))
    _finish(record.converged, f"OK | phi={record.phi:.10g} | total_flux={record.total_flux:.3e}")


def cmd_resolvent(args):
    """resolvent: h = (I + lam*Lambda)^-1 g"""
    from field_io import save_field_csv, save_json
    from resolvent import resolvent_apply

    grid = _grid(args.grid)
    g = _boundary(grid, args.g, args.seed)
    h, record = resolvent_apply(grid, g, args.lam, _solver_options(args))
    out = _out_dir(args)
    save_field_csv(os.path.join(out, "h.csv"), h.values)
    save_json(os.path.join(out, "report.json"), record.to_report())
    _finish(record.converged, f"OK | lambda={args.lam:g} | h_error_l2={record.h_error_l2:.3e}")


def cmd_evolve(args):
    """evolve: implicit Euler trajectory with diagnostics"""
    import math

    from tqdm import tqdm

    from event_bus import STEP_DONE, EventBus
    from evolution import diagnostics_report, evolve, save_trajectory

    grid = _grid(args.grid)
    h0 = _boundary(grid, args.h0, args.seed)
    f = _nemytskii(args.f)
    out = _out_dir(args)

    bus = EventBus()
    bar = tqdm(total=int(math.ceil(args.t_end / args.tau - 1e-9)), desc="evolve", unit="step",
               disable=None)

    def on_step(event_type, payload):
        if event_type == STEP_DONE:
            bar.update(1)
            bar.set_postfix(phi=f"{payload['phi']:.4g}")

    bus.subscribe(on_step)
    try:
        traj = evolve(grid, h0, args.t_end, args.tau, f=f, opts=_solver_options(args), bus=bus)
    finally:
        bar.close()
    report = diagnostics_report(traj, h0, grid)
    save_trajectory(out, traj, grid, report)
    _finish(traj.converged, f"OK | steps={len(traj.steps)} | phi_end={traj.steps[-1].phi:.6g} | "
                            f"long_time_ratio={report['summary']['long_time_ratio']:.3e}")


def cmd_plap_solve(args):
    """plap solve: regularized p-Laplace Robin problem"""
    from field_io import save_field_csv, save_json
    from lab_config import load_defaults, plap_options
    from plap import solve_robin_p

    grid = _grid(args.grid)
    g = _boundary(grid, args.g, args.seed)
    opts = plap_options({}, load_defaults()).with_updates(p=args.p)
    if args.epsilon is not None:
        opts = opts.with_updates(epsilon=args.epsilon)
    res = solve_robin_p(grid, g, args.alpha, opts)
    out = _out_dir(args)
    save_field_csv(os.path.join(out, "u.csv"), res.u.values)
    save_field_csv(os.path.join(out, "flux.csv"), res.flux.values)
    save_json(os.path.join(out, "report.json"), res.to_report())
    _finish(res.converged, f"OK | p={res.p:g} | iters={res.iterations} | residual={res.residual:.3e}")


def cmd_plap_continue(args):
    """plap continue: warm-started p -> 1 sweep against the TV solution"""
    from errors import InvalidArgument
    from field_io import save_json
    from lab_config import load_defaults, plap_options
    from plap import continuation

    grid = _grid(args.grid)
    g = _boundary(grid, args.g, args.seed)
    try:
        schedule = [float(p) for p in args.schedule.split(",")]
    except ValueError:
        raise InvalidArgument(f"--schedule must be comma-separated numbers, got {args.schedule!r}")
    report = continuation(grid, g, args.alpha, schedule, plap_options({}, load_defaults()),
                          _solver_options(args))
    save_json(os.path.join(_out_dir(args), "report.json"), report)
    distances = ", ".join(f"{e['distance_l1']:.4g}" for e in report["entries"])
    _finish(report["converged"], f"OK | distances=[{distances}]")


def cmd_oracle(args):
    """oracle: exact anisotropic minimum by min cuts (or brute force)"""
    from field_io import save_field_csv, save_json
    from oracle import coarea_mincut_min_phi, exhaustive_min_phi

    grid = _grid(args.grid)
    h = _boundary(grid, args.h, args.seed)
    if args.exhaustive:
        value = exhaustive_min_phi(grid, h)
        print(f"OK | exhaustive_value={value:.12g}")
        return
    value, u = coarea_mincut_min_phi(grid, h)
    if args.out:
        out = _out_dir(args)
        save_field_csv(os.path.join(out, "u.csv"), u.values)
        save_json(os.path.join(out, "report.json"), {"value": value, "grid": grid.summary()})
    print(f"OK | value={value:.12g}")


def cmd_experiment(args):
    """experiment: run a recipe config into an artifact directory"""
    from lab import run_experiment
    from lab_config import load_config

    cfg = load_config(args.config)
    summary = run_experiment(cfg, _out_dir(args), seed=args.seed, tol=args.tol)
    if summary["passed"] is False:
        print(f"FAILED | recipe={summary['recipe']} | digest={summary['digest'][:12]}", file=sys.stderr)
        sys.exit(EXIT_VERIFY_FAILED)
    _finish(summary["converged"], f"OK | recipe={summary['recipe']} | digest={summary['digest'][:12]} | "
                                  f"out={summary['directory']}")


def cmd_verify(args):
    """verify: property battery on a desk-size grid"""
    from field_io import load_json
    from lab import run_experiment

    grid_spec = args.grid or "square:8"
    kind, _, rest = grid_spec.partition(":")
    n, _, size = rest.partition(":")
    try:
        grid_cfg = {"kind": kind, "n": int(n), "size": float(size) if size else 1.0}
    except ValueError:
        print(f"ERROR: --grid must be KIND:N[:SIZE] for verify, got {grid_spec!r}", file=sys.stderr)
        sys.exit(EXIT_USAGE)
    cfg = {"recipe": "verify", "grid": grid_cfg, "seed": args.seed if args.seed is not None else 0}
    summary = run_experiment(cfg, _out_dir(args), tol=args.tol)
    checks = load_json(os.path.join(summary["directory"], "results.json"))["results"]["checks"]
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} | {c['name']} | value={c['value']:.3e} | allowed={c['allowed']:.3e}")
    if not summary["passed"]:
        sys.exit(EXIT_VERIFY_FAILED)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default=None, metavar="PATH")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--verbose", "-v", action="store_true")
    common.add_argument("--log-file", default=None, metavar="FILE")

    parser = _Parser(
        prog="lsgrad-dtn",
        description="Discrete laboratory for the Dirichlet-to-Neumann operator of the 1-Laplacian",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # --- grid ---
    p = subparsers.add_parser("grid", parents=[common], help="Build a grid")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.set_defaults(func=cmd_grid)

    # --- solve ---
    p = subparsers.add_parser("solve", parents=[common], help="Relaxed Dirichlet problem")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.add_argument("--h", required=True, metavar="DATA")
    p.set_defaults(func=cmd_solve)

    # --- dtn ---
    dtn_parser = subparsers.add_parser("dtn", help="Dirichlet-to-Neumann operator")
    dtn_sub = dtn_parser.add_subparsers(dest="dtn_command", help="dtn sub-commands")
    p = dtn_sub.add_parser("eval", parents=[common], help="phi(h) and g in Lambda(h)")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.add_argument("--h", required=True, metavar="DATA")
    p.set_defaults(func=cmd_dtn_eval)

    # --- resolvent ---
    p = subparsers.add_parser("resolvent", parents=[common], help="Apply (I + lam*Lambda)^-1")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.add_argument("--g", required=True, metavar="DATA")
    p.add_argument("--lambda", "--lam", dest="lam", required=True, type=float)
    p.set_defaults(func=cmd_resolvent)

    # --- evolve ---
    p = subparsers.add_parser("evolve", parents=[common], help="Implicit Euler trajectory")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.add_argument("--h0", required=True, metavar="DATA")
    p.add_argument("--tau", required=True, type=float)
    p.add_argument("--t-end", required=True, type=float)
    p.add_argument("--f", default="zero", metavar="zero|linear:OMEGA|table:FILE")
    p.set_defaults(func=cmd_evolve)

    # --- plap ---
    plap_parser = subparsers.add_parser("plap", help="p-Laplace Robin problems")
    plap_sub = plap_parser.add_subparsers(dest="plap_command", help="plap sub-commands")
    p = plap_sub.add_parser("solve", parents=[common], help="Solve for one p")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.add_argument("--g", required=True, metavar="DATA")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(func=cmd_plap_solve)
    p = plap_sub.add_parser("continue", parents=[common], help="Continuation p -> 1")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.add_argument("--g", required=True, metavar="DATA")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--schedule", default="1.8,1.4,1.2,1.1,1.05")
    p.set_defaults(func=cmd_plap_continue)

    # --- oracle ---
    p = subparsers.add_parser("oracle", parents=[common], help="Exact anisotropic minimum")
    p.add_argument("--grid", required=True, metavar="SPEC")
    p.add_argument("--h", required=True, metavar="DATA")
    p.add_argument("--exhaustive", action="store_true")
    p.set_defaults(func=cmd_oracle)

    # --- experiment ---
    p = subparsers.add_parser("experiment", parents=[common], help="Run a recipe config")
    p.add_argument("--config", required=True, metavar="FILE")
    p.set_defaults(func=cmd_experiment)

    # --- verify ---
    p = subparsers.add_parser("verify", parents=[common], help="Property battery")
    p.add_argument("--grid", default=None, metavar="KIND:N[:SIZE]")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if not hasattr(args, "func"):
        parser.print_help()
        sys.exit(EXIT_USAGE)

    from errors import InvalidArgument
    from field_io import PersistenceError
    from lab_config import configure_logging

    configure_logging(args.verbose, args.log_file)
    try:
        args.func(args)
    except (InvalidArgument, PersistenceError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
