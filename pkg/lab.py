#!/usr/bin/env python3
"""
Experiment recipes and the artifact directory they write.

run_experiment(cfg, out_dir) is a pure function of the config: every random
draw comes from numpy's Generator seeded by cfg["seed"], fan-out uses ordered
reductions, and the manifest digest skips only provenance and the run log.
"""

import copy
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from dtn import (accretivity_pairing, evaluate, evenness_check, homogeneity_report,
                 stability_probe)
from errors import InvalidArgument
from event_bus import RECIPE_STAGE, EventBus
from evolution import (NORMS, NemytskiiSpec, comparison_report, diagnostics_report,
                       error_in_norm, evolve, extinction_time)
from field_io import atomic_write, save_json, save_table_csv
from grid import (KIND_DISK, Grid, boundary_mean, boundary_norm, build_grid,
                  midpoint_angle)
from lab_config import (attach_file_log, detach_file_log, evolution_settings,
                        load_defaults, plap_options, solver_options)
from oracle import (MAX_LATTICE, EXHAUSTIVE_MAX_NODES, coarea_mincut_min_phi,
                    disk_example_data, disk_example_energy,
                    disk_example_energy_quadrature, disk_example_family,
                    exhaustive_min_phi, level_sets_nested)
from plap import PlapOptions, continuation, epsilon_sensitivity
from resolvent import resolvent_apply
from tools.config_schema import validate_config_dict
from tools.provenance import directory_digest, file_digests, provenance
from tvmin import (SolverOptions, _solve_relaxed_dirichlet_anisotropic,
                   energy_phi_h, solve_relaxed_dirichlet)

logger = logging.getLogger("lsgrad.lab")

DISK_LAMBDAS = (-1.0, -0.5, 0.0, 0.5, 1.0)
P_SCHEDULE = (1.8, 1.4, 1.2, 1.1, 1.05)
STABILITY_NS = (1, 2, 4, 8, 16)


@dataclass
class PlotData:
    """x/y series with axis metadata; the unit of figure-like output."""
    name: str
    title: str
    x_label: str
    y_label: str
    series: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, label: str, x, y) -> "PlotData":
        self.series.append({"label": label,
                            "x": [float(v) for v in x],
                            "y": [None if v is None else float(v) for v in y]})
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "title": self.title, "x_label": self.x_label,
                "y_label": self.y_label, "series": self.series}


@dataclass
class RecipeOutput:
    results: Dict[str, Any]
    tables: Dict[str, Dict[str, list]] = field(default_factory=dict)
    plots: List[PlotData] = field(default_factory=list)
    converged: bool = True
    passed: Optional[bool] = None


@dataclass
class RecipeContext:
    cfg: Dict[str, Any]
    grid: Grid
    solver: SolverOptions
    plap: PlapOptions
    evolution: Dict[str, Any]
    params: Dict[str, Any]
    rng: np.random.Generator
    workers: int = 1
    bus: Optional[EventBus] = None
    defaults: Dict[str, Any] = field(default_factory=dict)

    def stage(self, name: str, **extra) -> None:
        logger.info(f"LAB | STAGE | recipe={self.cfg['recipe']} | stage={name}")
        if self.bus is not None:
            self.bus.emit(RECIPE_STAGE, {"recipe": self.cfg["recipe"], "stage": name, **extra})

    def fan_out(self, fn: Callable, items: List) -> List:
        """Ordered parallel map."""
        with ThreadPoolExecutor(max_workers=max(1, self.workers)) as pool:
            return list(pool.map(fn, items))


RECIPES: Dict[str, Callable[[RecipeContext], RecipeOutput]] = {}


def register(name: str):
    def wrap(fn):
        RECIPES[name] = fn
        return fn
    return wrap


# ---------------------------------------------------------------------------
# Boundary data helpers
# ---------------------------------------------------------------------------

def _centre(grid: Grid) -> float:
    return 0.0 if grid.kind == KIND_DISK else 0.5 * grid.size


def sign_x_data(grid: Grid) -> np.ndarray:
    return np.sign(grid.seg_midpoint[:, 0] - _centre(grid))


def random_boundary(grid: Grid, rng: np.random.Generator, modes: int = 3,
                    amplitude: float = 1.0) -> np.ndarray:
    """Random trigonometric polynomial in the midpoint angle."""
    theta = midpoint_angle(grid)
    a = rng.uniform(-1.0, 1.0, modes + 1)
    b = rng.uniform(-1.0, 1.0, modes + 1)
    h = a[0] * np.ones_like(theta)
    for k in range(1, modes + 1):
        h = h + (a[k] * np.cos(k * theta) + b[k] * np.sin(k * theta)) / k
    return amplitude * h / max(float(np.abs(h).max()), 1e-12)


def boundary_data(ctx: RecipeContext, key: str = "data") -> np.ndarray:
    choice = ctx.params.get(key, "sign_x")
    if choice == "random":
        return random_boundary(ctx.grid, ctx.rng)
    data = _data_on(ctx.grid, choice)
    if data is None:
        raise InvalidArgument(f"params.{key} must be sign_x, random or disk_example, got {choice!r}")
    return data


def _data_on(grid: Grid, choice: str) -> Optional[np.ndarray]:
    if choice == "sign_x":
        return sign_x_data(grid)
    if choice == "disk_example":
        return disk_example_data(grid).values
    return None


def chord_value(grid: Grid) -> float:
    """phi(sign x): a jump of 2 across the vertical chord through the centre."""
    return 2.0 * (2.0 * grid.size if grid.kind == KIND_DISK else grid.size)


# ---------------------------------------------------------------------------
# Recipes
# ---------------------------------------------------------------------------

@register("disk_nonuniqueness")
def disk_nonuniqueness(ctx: RecipeContext) -> RecipeOutput:
    grid = ctx.grid
    if grid.kind != KIND_DISK:
        raise InvalidArgument("disk_nonuniqueness needs grid.kind = 'disk'")
    lambdas = [float(v) for v in ctx.params.get("lambdas", DISK_LAMBDAS)]
    h = disk_example_data(grid)
    ctx.stage("family")
    values = [energy_phi_h(grid, h, disk_example_family(grid, lam)) for lam in lambdas]
    ctx.stage("solve")
    sol = solve_relaxed_dirichlet(grid, h, ctx.solver, bus=ctx.bus)
    closed = disk_example_energy() * grid.size
    quadrature = disk_example_energy_quadrature() * grid.size
    low, high = min(values), max(values)
    results = {
        "lambdas": lambdas,
        "family_energy": values,
        "relative_spread": (high - low) / low if low > 0 else 0.0,
        "solver_energy": sol.primal_energy,
        "solver_dual": sol.dual_energy,
        "solver_gap": sol.gap,
        "solver_over_family_min": sol.primal_energy / low if low > 0 else None,
        "closed_form": closed,
        "quadrature": quadrature,
        "family_vs_closed_form": [abs(v - closed) / closed for v in values],
        "solver": sol.to_report(),
    }
    plot = PlotData("family_energy", "Energy of the minimizer family", "lambda", "Phi_h(u^lambda)")
    plot.add("discrete family", lambdas, values)
    plot.add("closed form", lambdas, [closed] * len(lambdas))
    plot.add("solver", lambdas, [sol.primal_energy] * len(lambdas))
    return RecipeOutput(results=results,
                        tables={"family": {"lambda": lambdas, "phi": values}},
                        plots=[plot], converged=sol.converged)


def oracle_reference(ctx: RecipeContext, h: np.ndarray) -> Dict[str, Any]:
    """Exact anisotropic value for the recipe's data, extrapolated when the grid is too wide.

    Above the oracle cap the data are rebuilt on lattices n_c = cap and n_c/2
    and the O(1/n) staircase error is extrapolated to the recipe's n.
    """
    grid = ctx.grid
    cap = int(ctx.params.get("oracle_max_n", ctx.defaults.get("oracle", {}).get("max_n", MAX_LATTICE)))
    if grid.n <= cap:
        value, u = coarea_mincut_min_phi(grid, h, workers=ctx.workers)
        return {"oracle_n": [grid.n], "oracle_values": [value], "oracle_anisotropic": value,
                "oracle_extrapolated": value,
                "oracle_levels_nested": level_sets_nested(grid, u, np.unique(h))}
    choice = ctx.params.get("data", "sign_x")
    fine = cap - cap % 2
    coarse = fine // 2
    if _data_on(grid, choice) is None or coarse < 4:
        logger.info(f"LAB | ORACLE_SKIPPED | data={choice} | n={grid.n} | cap={cap}")
        return {}
    values, nested = [], True
    for n in (coarse, fine):
        other = build_grid(grid.kind, n, grid.size)
        data = _data_on(other, choice)
        value, u = coarea_mincut_min_phi(other, data, workers=ctx.workers)
        values.append(value)
        nested = nested and level_sets_nested(other, u, np.unique(data))
    extrapolated = values[1] - (values[0] - values[1]) * (1.0 - fine / grid.n)
    return {"oracle_n": [coarse, fine], "oracle_values": values, "oracle_anisotropic": values[1],
            "oracle_extrapolated": extrapolated, "oracle_levels_nested": nested}


@register("sign_data")
def sign_data(ctx: RecipeContext) -> RecipeOutput:
    grid = ctx.grid
    h = boundary_data(ctx)
    ctx.stage("evaluate")
    record = evaluate(grid, h, ctx.solver, bus=ctx.bus)
    results = {
        "phi": record.phi,
        "primal_energy": record.solution.primal_energy,
        "gap": record.solution.gap,
        "total_flux": record.total_flux,
        "chord_value": chord_value(grid),
        "relative_to_chord": abs(record.solution.primal_energy - chord_value(grid)) / chord_value(grid),
        "record": record.to_report(grid),
    }
    ctx.stage("oracle")
    oracle = oracle_reference(ctx, h)
    results.update(oracle)
    if oracle:
        reference = oracle["oracle_extrapolated"]
        results["relative_to_oracle"] = abs(record.solution.primal_energy - reference) / abs(reference)
    angle = midpoint_angle(grid)
    order = np.argsort(angle, kind="stable")
    plot = PlotData("conormal", "Co-normal selection along the boundary", "angle", "g")
    plot.add("h", angle[order], h[order])
    plot.add("g", angle[order], record.g.values[order])
    return RecipeOutput(results=results,
                        tables={"conormal": {"angle": angle[order].tolist(),
                                             "h": h[order].tolist(),
                                             "g": record.g.values[order].tolist()}},
                        plots=[plot], converged=record.converged)


def _trajectory_tables(grid: Grid, traj) -> Dict[str, list]:
    spreads_1, spreads_inf = [], []
    for state in traj.states:
        dev = state.values - boundary_mean(grid, state)
        spreads_1.append(boundary_norm(grid, dev, 1))
        spreads_inf.append(float(np.abs(dev).max(initial=0.0)))
    return {
        "time": list(traj.times),
        "phi": [traj.phi0] + [s.phi for s in traj.steps],
        "mass": [float(np.sum(grid.seg_length * traj.states[0].values))] + [s.mass for s in traj.steps],
        "spread_l1": spreads_1,
        "spread_inf": spreads_inf,
    }


def _run_trajectory(ctx: RecipeContext, h0: np.ndarray, f: Optional[NemytskiiSpec] = None):
    settings = ctx.evolution
    return evolve(ctx.grid, h0, settings["t_end"], settings["tau"],
                  f=f or settings["f"], opts=ctx.solver, bus=ctx.bus)


@register("semigroup_decay")
def semigroup_decay(ctx: RecipeContext) -> RecipeOutput:
    h0 = boundary_data(ctx)
    ctx.stage("evolve")
    traj = _run_trajectory(ctx, h0)
    report = diagnostics_report(traj, h0, ctx.grid)
    table = _trajectory_tables(ctx.grid, traj)
    plots = [
        PlotData("phi", "Energy along the semigroup", "t", "phi(h(t))").add("phi", table["time"], table["phi"]),
        PlotData("mass", "Boundary mass", "t", "integral of h(t)").add("mass", table["time"], table["mass"]),
        PlotData("spread", "Distance to the mean", "t", "||h(t) - mean||_1").add(
            "spread", table["time"], table["spread_l1"]),
    ]
    return RecipeOutput(results={"tau": traj.tau, "f": traj.f.to_dict(), "diagnostics": report},
                        tables={"trajectory": table}, plots=plots, converged=traj.converged)


@register("extinction_probe")
def extinction_probe(ctx: RecipeContext) -> RecipeOutput:
    h0 = boundary_data(ctx)
    threshold = float(ctx.params.get("threshold", 1e-4))
    ctx.stage("evolve")
    traj = _run_trajectory(ctx, h0)
    t_ext = extinction_time(traj, ctx.grid, threshold)
    table = _trajectory_tables(ctx.grid, traj)
    plot = PlotData("spread_inf", "Sup distance to the mean", "t", "||h(t) - mean||_inf")
    plot.add("spread", table["time"], table["spread_inf"])
    return RecipeOutput(results={"threshold": threshold,
                                 "extinction_time": t_ext if t_ext is not None else "not reached",
                                 "t_end": traj.times[-1]},
                        tables={"trajectory": table}, plots=[plot], converged=traj.converged)


def _resolvent_pair(ctx: RecipeContext, g1: np.ndarray, g2: np.ndarray, lam: float) -> Dict[str, Any]:
    grid = ctx.grid
    h1, r1 = resolvent_apply(grid, g1, lam, ctx.solver)
    h2, r2 = resolvent_apply(grid, g2, lam, ctx.solver)
    error = r1.h_error_l2 + r2.h_error_l2
    diff_h = h1.values - h2.values
    diff_g = g1 - g2
    margins = {}
    for name, part in (("identity", lambda x: x), ("positive", lambda x: np.maximum(x, 0.0))):
        for q in NORMS:
            margins[f"{name}_{q}"] = (boundary_norm(grid, part(diff_g), q) + error_in_norm(grid, error, q)
                                      - boundary_norm(grid, part(diff_h), q))
    return {"lambda": lam, "margins": margins, "min_margin": min(margins.values()),
            "converged": r1.converged and r2.converged}


def _order_pair(ctx: RecipeContext, g: np.ndarray, bump: np.ndarray, lam: float) -> Dict[str, Any]:
    grid = ctx.grid
    h_lo, r_lo = resolvent_apply(grid, g, lam, ctx.solver)
    h_hi, r_hi = resolvent_apply(grid, g + bump, lam, ctx.solver)
    slack = error_in_norm(grid, r_lo.h_error_l2 + r_hi.h_error_l2, "inf")
    return {"lambda": lam, "order_margin": float(np.min(h_hi.values - h_lo.values)) + slack,
            "converged": r_lo.converged and r_hi.converged}


@register("comparison_pairs")
def comparison_pairs(ctx: RecipeContext) -> RecipeOutput:
    grid = ctx.grid
    pairs = int(ctx.params.get("pairs", 3))
    lambdas = [float(v) for v in ctx.params.get("lambdas", (0.1, 0.5, 1.0))]
    draws = []
    for i in range(pairs):
        g1 = random_boundary(grid, ctx.rng)
        g2 = random_boundary(grid, ctx.rng)
        bump = np.abs(random_boundary(grid, ctx.rng, amplitude=0.5))
        draws.append((g1, g2, bump, lambdas[i % len(lambdas)]))

    ctx.stage("resolvent", pairs=pairs)
    contraction = ctx.fan_out(lambda d: _resolvent_pair(ctx, d[0], d[1], d[3]), draws)
    order = ctx.fan_out(lambda d: _order_pair(ctx, d[0], d[2], d[3]), draws)

    ctx.stage("trajectories")
    omega = float(ctx.params.get("omega", 0.5))
    f = NemytskiiSpec.linear(omega) if omega > 0 else NemytskiiSpec.zero()
    n_traj = max(1, min(int(ctx.params.get("trajectory_pairs", 1)), pairs))
    starts = [h0 for d in draws[:n_traj] for h0 in (d[0], d[1])]
    trajectories = ctx.fan_out(lambda h0: _run_trajectory(ctx, h0, f), starts)
    energy = []
    for h0, traj in zip(starts, trajectories):
        summary = diagnostics_report(traj, h0, grid)["summary"]
        energy.append({"energy_inequality": summary["energy_inequality"], "lq_bound": summary["lq_bound"],
                       "converged": summary["converged"]})
    comparisons = [comparison_report(a, b, grid, omega) for a, b in zip(trajectories[::2], trajectories[1::2])]
    comparison = comparisons[0]

    times = [row["time"] for row in comparison["steps"]]
    plot = PlotData("quasi_contraction", "Quasi-contraction margin", "t", "margin")
    for q in NORMS:
        plot.add(f"q={q}", times, [row[f"identity_{q}"]["margin"] for row in comparison["steps"]])
    converged = (all(c["converged"] for c in contraction) and all(o["converged"] for o in order)
                 and all(t.converged for t in trajectories))
    results = {
        "resolvent_contraction": contraction,
        "order_preservation": order,
        "trajectory_comparison": {k: v for k, v in comparison.items() if k != "steps"},
        "trajectory_pairs": [{k: v for k, v in c.items() if k != "steps"} for c in comparisons],
        "min_trajectory_margin": min(c["min_margin"] for c in comparisons),
        "trajectory_diagnostics": energy,
        "energy_inequality_ok": all(e["energy_inequality"] for e in energy),
        "min_contraction_margin": min(c["min_margin"] for c in contraction),
        "min_order_margin": min(o["order_margin"] for o in order),
    }
    table = {"time": times}
    for q in NORMS:
        table[f"margin_{q}"] = [row[f"identity_{q}"]["margin"] for row in comparison["steps"]]
    return RecipeOutput(results=results, tables={"quasi_contraction": table},
                        plots=[plot], converged=converged)


@register("plap_convergence")
def plap_convergence(ctx: RecipeContext) -> RecipeOutput:
    grid = ctx.grid
    g = random_boundary(grid, ctx.rng) if ctx.params.get("data", "random") == "random" else boundary_data(ctx)
    alpha = float(ctx.params.get("alpha", 1.0))
    schedule = [float(p) for p in ctx.params.get("p_schedule", P_SCHEDULE)]
    ctx.stage("continuation", schedule=schedule)
    report = continuation(grid, g, alpha, schedule, ctx.plap, ctx.solver)
    distances = [e["distance_l1"] for e in report["entries"]]
    steps_ok = all(b <= 1.1 * a for a, b in zip(distances, distances[1:]))
    results = {
        "continuation": report,
        "distance_nonincreasing_within_10pct": steps_ok,
        "final_over_first": distances[-1] / distances[0] if distances[0] > 0 else 0.0,
    }
    plots = [PlotData("distance", "Distance of u_p to the TV solution", "p", "||u_p - u_TV||_1 / |Omega|")
             .add("distance", schedule, distances)]
    if "epsilons" in ctx.params:
        ctx.stage("epsilon_sensitivity")
        eps = [float(e) for e in ctx.params["epsilons"]]
        sens = epsilon_sensitivity(grid, g, alpha, schedule[-1], eps, ctx.plap, ctx.solver)
        results["epsilon_sensitivity"] = sens
        plots.append(PlotData("epsilon", "Regularization sensitivity", "epsilon", "distance")
                     .add(f"p={schedule[-1]:g}", eps, [e["distance_l1"] for e in sens["entries"]]))
    table = {"p": schedule, "distance_l1": distances,
             "flux_deviation": [e["flux_deviation"] for e in report["entries"]]}
    return RecipeOutput(results=results, tables={"continuation": table}, plots=plots,
                        converged=report["converged"])


@register("stability_sequence")
def stability_sequence(ctx: RecipeContext) -> RecipeOutput:
    grid = ctx.grid
    h = boundary_data(ctx)
    rho = ctx.rng.uniform(-1.0, 1.0, grid.num_segments)
    ns = [int(n) for n in ctx.params.get("ns", STABILITY_NS)]
    ctx.stage("probe", ns=ns)
    report = stability_probe(grid, h, [h + rho / n for n in ns], ctx.solver)
    tol = ctx.solver.tolerance
    for entry in report["entries"]:
        entry["tolerance_margin"] = entry["distance_l1"] + 2.0 * tol - entry["phi_deviation"]
    entries = report["entries"]
    plot = PlotData("stability", "phi along h + rho/n", "n", "value")
    plot.add("|phi_n - phi|", ns, [e["phi_deviation"] for e in entries])
    plot.add("||h_n - h||_1", ns, [e["distance_l1"] for e in entries])
    table = {"n": ns,
             "distance_l1": [e["distance_l1"] for e in entries],
             "phi_deviation": [e["phi_deviation"] for e in entries],
             "lipschitz_margin": [e["lipschitz_margin"] for e in entries]}
    return RecipeOutput(results={"probe": report,
                                 "min_lipschitz_margin": min(e["lipschitz_margin"] for e in entries)},
                        tables={"stability": table}, plots=[plot])


# ---------------------------------------------------------------------------
# Verification battery
# ---------------------------------------------------------------------------

def _check(name: str, value: float, allowed: float, **detail) -> Dict[str, Any]:
    return {"name": name, "value": float(value), "allowed": float(allowed),
            "passed": bool(value <= allowed), **detail}


def _verify_constants(ctx: RecipeContext) -> List[Dict[str, Any]]:
    grid, c = ctx.grid, 0.7
    const = np.full(grid.num_segments, c)
    sol = solve_relaxed_dirichlet(grid, const, ctx.solver)
    h, rec = resolvent_apply(grid, const, 0.5, ctx.solver)
    return [
        _check("phi_of_constant", sol.primal_energy, 1e-8 * c * grid.perimeter),
        _check("resolvent_fixes_constant", float(np.abs(h.values - c).max()),
               1e-6 + error_in_norm(grid, rec.h_error_l2, "inf")),
    ]


def _verify_oracle(ctx: RecipeContext, h: np.ndarray) -> List[Dict[str, Any]]:
    grid = ctx.grid
    if grid.n > MAX_LATTICE:
        return []
    value, _ = coarea_mincut_min_phi(grid, h, workers=ctx.workers)
    sol = _solve_relaxed_dirichlet_anisotropic(grid, h, ctx.solver)
    scale = 1e-9 * max(1.0, value)
    checks = [
        _check("oracle_above_dual", sol.dual_energy - value, scale),
        _check("oracle_below_primal", value - sol.primal_energy, scale),
    ]
    if grid.num_nodes <= EXHAUSTIVE_MAX_NODES and np.unique(h).size <= 3:
        checks.append(_check("exhaustive_matches_coarea", abs(exhaustive_min_phi(grid, h) - value), scale))
    return checks


def _verify_structure(ctx: RecipeContext, h: np.ndarray, other: np.ndarray) -> List[Dict[str, Any]]:
    grid = ctx.grid
    checks = []
    homog = homogeneity_report(grid, h, [0.5, 2.0], ctx.solver, workers=ctx.workers)
    for e in homog["entries"]:
        checks.append(_check(f"homogeneity_{e['lam']:g}", e["deviation"],
                             e["allowed"] + 1e-12 * grid.perimeter))
    even = evenness_check(grid, h, ctx.solver)
    checks.append(_check("evenness", even["deviation"], even["allowed"] + 1e-12 * grid.perimeter))
    a = evaluate(grid, h, ctx.solver)
    b = evaluate(grid, other, ctx.solver)
    pairing = accretivity_pairing(grid, a, b)
    checks.append(_check("accretivity_pairing", -pairing["minimum"], pairing["slack"] + 1e-12))
    pair = _resolvent_pair(ctx, h, other, 0.5)
    checks.append(_check("resolvent_contraction", -pair["min_margin"], 1e-9))
    return checks


def _verify_semigroup(ctx: RecipeContext, h0: np.ndarray) -> List[Dict[str, Any]]:
    grid = ctx.grid
    traj = evolve(grid, h0, 0.5, 0.1, opts=ctx.solver)
    report = diagnostics_report(traj, h0, grid)
    rows = report["steps"]
    checks = [
        _check("phi_nonincreasing", -min(r["phi_decay_margin"] for r in rows), 0.0),
        _check("energy_inequality", -min(r["energy_margin"] for r in rows), 0.0),
    ]
    drift = max(r["mass_drift"] - r["mass_drift_bound"] for r in rows)
    checks.append(_check("mass_drift", drift, 1e-12 * grid.perimeter))
    return checks


@register("verify")
def verify(ctx: RecipeContext) -> RecipeOutput:
    grid = ctx.grid
    h = random_boundary(grid, ctx.rng)
    other = random_boundary(grid, ctx.rng)
    checks = []
    for stage, run in (("constants", lambda: _verify_constants(ctx)),
                       ("oracle", lambda: _verify_oracle(ctx, np.round(2.0 * h) / 2.0)),
                       ("structure", lambda: _verify_structure(ctx, h, other)),
                       ("semigroup", lambda: _verify_semigroup(ctx, sign_x_data(grid)))):
        ctx.stage(stage)
        checks.extend(run())
    failed = [c["name"] for c in checks if not c["passed"]]
    level = logging.INFO if not failed else logging.WARNING
    logger.log(level, f"LAB | VERIFY | checks={len(checks)} | failed={failed}")
    return RecipeOutput(results={"checks": checks, "failed": failed},
                        tables={"checks": {"name": [c["name"] for c in checks],
                                           "value": [c["value"] for c in checks],
                                           "allowed": [c["allowed"] for c in checks]}},
                        passed=not failed)


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def render_svg(path: str, plot: PlotData) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "lsgrad"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for s in plot.series:
        y = [math.nan if v is None else v for v in s["y"]]
        ax.plot(s["x"], y, marker="o", label=s["label"])
    ax.set_title(plot.title)
    ax.set_xlabel(plot.x_label)
    ax.set_ylabel(plot.y_label)
    if len(plot.series) > 1:
        ax.legend()
    try:
        atomic_write(path, "wb", lambda f: fig.savefig(f, format="svg", metadata={"Date": None}))
    finally:
        plt.close(fig)


def emit_plot_data(directory: str, plot: PlotData, svg: bool = False) -> List[str]:
    """Write plot_<name>.json and, when asked, plot_<name>.svg."""
    paths = [os.path.join(directory, f"plot_{plot.name}.json")]
    save_json(paths[0], plot.to_dict())
    if svg:
        paths.append(os.path.join(directory, f"plot_{plot.name}.svg"))
        render_svg(paths[1], plot)
    return paths


def effective_config(cfg: Dict[str, Any], *, seed: Optional[int] = None,
                     tol: Optional[float] = None) -> Dict[str, Any]:
    out = copy.deepcopy(cfg)
    if seed is not None:
        out["seed"] = seed
    if tol is not None:
        out.setdefault("solver", {})["tolerance"] = tol
    return out


def run_experiment(cfg: Dict[str, Any], out_dir: str, *, defaults: Optional[Dict[str, Any]] = None,
                   seed: Optional[int] = None, tol: Optional[float] = None,
                   bus: Optional[EventBus] = None) -> Dict[str, Any]:
    """Run one recipe and write its artifact directory.

    Raises:
        InvalidArgument: malformed config or unknown recipe
        PersistenceError: artifact writes failed
    """
    errors = validate_config_dict(cfg)
    if errors:
        raise InvalidArgument("invalid config: " + "; ".join(errors))
    cfg = effective_config(cfg, seed=seed, tol=tol)
    defaults = load_defaults() if defaults is None else defaults
    recipe = RECIPES[cfg["recipe"]]
    grid_cfg = cfg["grid"]
    grid = build_grid(grid_cfg["kind"], grid_cfg["n"], float(grid_cfg.get("size", 1.0)))
    output_cfg = {**defaults.get("lab", {}), **cfg.get("output", {})}

    os.makedirs(out_dir, exist_ok=True)
    handler = None
    if defaults.get("logging", {}).get("run_log", True):
        handler = attach_file_log(os.path.join(out_dir, "run.log"))
    try:
        logger.info(f"LAB | START | recipe={cfg['recipe']} | out={out_dir}")
        ctx = RecipeContext(
            cfg=cfg,
            grid=grid,
            solver=solver_options(cfg, defaults),
            plap=plap_options(cfg, defaults),
            evolution=evolution_settings(cfg, defaults),
            params=dict(cfg.get("params", {})),
            rng=np.random.default_rng(int(cfg.get("seed", 0))),
            workers=int(output_cfg.get("workers", 1)),
            bus=bus,
            defaults=defaults,
        )
        output = recipe(ctx)

        save_json(os.path.join(out_dir, "config.json"), cfg)
        save_json(os.path.join(out_dir, "results.json"), {
            "recipe": cfg["recipe"],
            "grid": grid.summary(),
            "converged": output.converged,
            "passed": output.passed,
            "results": output.results,
        })
        for name, columns in output.tables.items():
            save_table_csv(os.path.join(out_dir, f"{name}.csv"), columns)
        for plot in output.plots:
            emit_plot_data(out_dir, plot, svg=bool(output_cfg.get("svg", False)))
        save_json(os.path.join(out_dir, "provenance.json"), provenance(cfg))
        digest = directory_digest(out_dir)
        save_json(os.path.join(out_dir, "manifest.json"),
                  {"files": file_digests(out_dir), "digest": digest})
        logger.info(f"LAB | DONE | recipe={cfg['recipe']} | digest={digest[:12]} | "
                    f"converged={output.converged} | passed={output.passed}")
    finally:
        detach_file_log(handler)
    return {"directory": out_dir, "recipe": cfg["recipe"], "digest": digest,
            "converged": output.converged, "passed": output.passed}
