#!/usr/bin/env python3
"""
Implicit Euler for  dh/dt + Lambda(h) + F(h) = source(t)  on the boundary.

Each step is one resolvent application with lambda = tau to the data
h_n + tau*(source_{n+1} - F(h_n)); F is treated explicitly. The Robin solve
of every step is also the bulk solution of the elliptic-parabolic system, so
its certificate is recorded per step.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidArgument, require
from grid import (BoundaryData, Grid, boundary_integral, boundary_mean,
                  boundary_norm, boundary_values)
from resolvent import RobinSolution, resolvent_apply
from tvmin import SolverOptions, dirichlet_bounds, solve_relaxed_dirichlet

logger = logging.getLogger("lsgrad.evolution")

NORMS = (1, 2, "inf")
NEMYTSKII_KINDS = ("zero", "linear", "table")


@dataclass(frozen=True)
class NemytskiiSpec:
    """Superposition h -> f(h) with f(0) = 0 and Lipschitz constant omega.

    ``table`` is piecewise linear through (knots, values), extended linearly
    with the end slopes.
    """
    kind: str = "zero"
    omega: float = 0.0
    knots: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    def __post_init__(self):
        require(self.kind in NEMYTSKII_KINDS, f"f kind must be one of {NEMYTSKII_KINDS}, got {self.kind!r}")
        require(np.isfinite(self.omega) and self.omega >= 0, f"omega must be >= 0, got {self.omega!r}")
        if self.kind != "table":
            return
        x = np.asarray(self.knots, dtype=float)
        y = np.asarray(self.values, dtype=float)
        require(x.size >= 2 and x.size == y.size, "table needs >= 2 knots and as many values")
        require(np.all(np.isfinite(x)) and np.all(np.isfinite(y)), "table entries must be finite")
        require(np.all(np.diff(x) > 0), "table knots must be strictly increasing")
        slope = float(np.abs(np.diff(y) / np.diff(x)).max())
        require(slope <= self.omega + 1e-12,
                f"declared omega={self.omega} is below the table's Lipschitz constant {slope:.6g}")
        require(abs(float(self._table(np.zeros(1))[0])) <= 1e-12, "table must satisfy f(0) = 0")

    @classmethod
    def zero(cls) -> "NemytskiiSpec":
        return cls()

    @classmethod
    def linear(cls, omega: float) -> "NemytskiiSpec":
        return cls(kind="linear", omega=float(omega))

    @classmethod
    def table(cls, knots: Sequence[float], values: Sequence[float],
              omega: Optional[float] = None) -> "NemytskiiSpec":
        x = np.asarray(knots, dtype=float)
        y = np.asarray(values, dtype=float)
        if omega is None:
            omega = float(np.abs(np.diff(y) / np.diff(x)).max()) if x.size >= 2 else 0.0
        return cls(kind="table", omega=float(omega), knots=tuple(x.tolist()), values=tuple(y.tolist()))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NemytskiiSpec":
        kind = data.get("kind", "zero")
        if kind == "table":
            return cls.table(data.get("knots", ()), data.get("values", ()), data.get("omega"))
        return cls(kind=kind, omega=float(data.get("omega", 0.0)))

    def to_dict(self) -> Dict[str, Any]:
        out = {"kind": self.kind, "omega": self.omega}
        if self.kind == "table":
            out.update(knots=list(self.knots), values=list(self.values))
        return out

    def _table(self, h: np.ndarray) -> np.ndarray:
        x = np.asarray(self.knots)
        y = np.asarray(self.values)
        left = (y[1] - y[0]) / (x[1] - x[0])
        right = (y[-1] - y[-2]) / (x[-1] - x[-2])
        out = np.interp(h, x, y)
        out = np.where(h < x[0], y[0] + left * (h - x[0]), out)
        return np.where(h > x[-1], y[-1] + right * (h - x[-1]), out)

    def apply(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(h)
        if self.kind == "linear":
            return self.omega * h
        return self._table(h)

    def primitive(self, h) -> np.ndarray:
        """int_0^h f(r) dr, exact for every kind."""
        h = np.asarray(h, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(h)
        if self.kind == "linear":
            return 0.5 * self.omega * h * h
        x = np.asarray(self.knots)
        y = np.asarray(self.values)
        cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))])

        def from_first_knot(t):
            k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 1)
            return cumulative[k] + 0.5 * (t - x[k]) * (y[k] + self._table(t))

        return from_first_knot(h) - from_first_knot(np.zeros(1))[0]


@dataclass
class StepRecord:
    index: int
    time: float
    mass: float
    phi: float
    phi_lower: float
    step_g: np.ndarray
    dhdt_norms: Dict[str, float]
    source_l2: float
    converged: bool
    gap: float
    h_error_l2: float
    flux_imbalance: float
    inclusion_residual: float
    div_residual: float
    sign_defect: float

    def to_dict(self) -> Dict[str, Any]:
        out = {k: v for k, v in self.__dict__.items() if k != "step_g"}
        out["step_g_sup"] = float(np.abs(self.step_g).max(initial=0.0))
        return out


@dataclass
class Trajectory:
    tau: float
    f: NemytskiiSpec
    times: List[float]
    states: List[BoundaryData]
    steps: List[StepRecord]
    sources: List[np.ndarray]
    phi0: float
    phi0_lower: float
    bulk: List[np.ndarray] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.steps)

    @property
    def final(self) -> BoundaryData:
        return self.states[-1]


SourceLike = Union[None, BoundaryData, np.ndarray, Callable[[float], Any], Sequence]


def _source_at(grid: Grid, source: SourceLike, n: int, t: float) -> np.ndarray:
    if source is None:
        return np.zeros(grid.num_segments)
    if callable(source):
        return boundary_values(grid, source(t), "source")
    if isinstance(source, (BoundaryData, np.ndarray)):
        return boundary_values(grid, source, "source")
    return boundary_values(grid, source[n], f"source[{n}]")


def _check_step(tau: float, f: NemytskiiSpec) -> None:
    require(np.isfinite(tau) and tau > 0, f"tau must be a positive real, got {tau!r}")
    if f.kind != "zero" and tau * f.omega >= 1.0:
        raise InvalidArgument(f"tau*omega = {tau * f.omega:g} must be < 1")


def _advance(grid: Grid, h_n: np.ndarray, tau: float, source_n: np.ndarray,
             f: NemytskiiSpec, opts: Optional[SolverOptions], warm: Optional[RobinSolution]):
    forcing = source_n - f.apply(h_n)
    data = h_n + tau * forcing
    h, record = resolvent_apply(grid, data, tau, opts, warm=warm)
    step_g = (h_n - h.values) / tau + forcing
    return h, record, step_g


def implicit_euler_step(grid: Grid, h_n, tau: float, source_n=None,
                        f: Optional[NemytskiiSpec] = None,
                        opts: Optional[SolverOptions] = None) -> BoundaryData:
    """h_{n+1} = J_tau(h_n + tau*(source_n - F(h_n)))."""
    f = f or NemytskiiSpec.zero()
    _check_step(tau, f)
    hv = boundary_values(grid, h_n, "h_n")
    src = _source_at(grid, source_n, 0, 0.0)
    h, _, _ = _advance(grid, hv, tau, src, f, opts, None)
    return h


def evolve(grid: Grid, h0, t_end: float, tau: float, source: SourceLike = None,
           f: Optional[NemytskiiSpec] = None, opts: Optional[SolverOptions] = None, *,
           bus=None, keep_bulk: bool = False) -> Trajectory:
    """Run ceil(t_end/tau) implicit Euler steps (at least one) with per-step diagnostics."""
    f = f or NemytskiiSpec.zero()
    _check_step(tau, f)
    require(np.isfinite(t_end) and t_end > 0, f"t_end must be a positive real, got {t_end!r}")
    h = boundary_values(grid, h0, "h0").copy()
    steps = max(1, int(math.ceil(t_end / tau - 1e-9)))

    start = solve_relaxed_dirichlet(grid, h, opts)
    traj = Trajectory(tau=float(tau), f=f, times=[0.0], states=[BoundaryData(h)], steps=[],
                      sources=[], phi0=start.primal_energy, phi0_lower=start.dual_energy)
    warm = None
    for n in range(steps):
        t_next = (n + 1) * tau
        src = _source_at(grid, source, n, t_next)
        h_next, record, step_g = _advance(grid, h, tau, src, f, opts, warm)
        robin = record.robin
        phi_lower, phi_upper = dirichlet_bounds(grid, h_next, robin.u, robin.z)
        velocity = (h_next.values - h) / tau
        step = StepRecord(
            index=n + 1,
            time=t_next,
            mass=boundary_integral(grid, h_next),
            phi=phi_upper,
            phi_lower=phi_lower,
            step_g=step_g,
            dhdt_norms={str(q): boundary_norm(grid, velocity, q) for q in NORMS},
            source_l2=boundary_norm(grid, src, 2),
            converged=robin.converged,
            gap=robin.gap,
            h_error_l2=record.h_error_l2,
            flux_imbalance=abs(boundary_integral(grid, robin.conormal_g)),
            inclusion_residual=max(robin.boundary_defect, record.certificate.sign_defect),
            div_residual=robin.div_residual,
            sign_defect=record.certificate.sign_defect,
        )
        traj.times.append(t_next)
        traj.states.append(h_next)
        traj.steps.append(step)
        traj.sources.append(src)
        if keep_bulk:
            traj.bulk.append(robin.u.values)
        if bus is not None:
            bus.emit("STEP_DONE", {"step": n + 1, "steps": steps, "time": t_next,
                                   "mass": step.mass, "phi": step.phi, "converged": step.converged})
        h = h_next.values
        warm = robin
    logger.info(f"EVOLVE | DONE | steps={steps} | tau={tau:g} | f={f.kind} | "
                f"phi_end={traj.steps[-1].phi:.6g} | converged={traj.converged}")
    return traj


def _energy(grid: Grid, f: NemytskiiSpec, h: np.ndarray, phi: float) -> float:
    return phi + float(np.sum(grid.seg_length * f.primitive(h)))


def diagnostics_report(trajectory: Trajectory, h0, grid: Grid, *,
                       decay_slack: float = 0.05, phi_slack: float = 1e-6,
                       energy_slack: float = 1e-5) -> Dict[str, Any]:
    """Per-step margins of the semigroup estimates (positive = satisfied)."""
    hv = boundary_values(grid, h0, "h0")
    f = trajectory.f
    unforced = f.kind == "zero" and all(not np.any(s) for s in trajectory.sources)
    scale = grid.perimeter * max(float(np.abs(hv).max(initial=0.0)), 1e-300)
    omega = f.omega if f.kind != "zero" else 0.0
    tau = trajectory.tau

    h0_l2_sq = boundary_norm(grid, hv, 2) ** 2
    h0_sup = float(np.abs(hv).max(initial=0.0))
    h0_norms = {str(q): boundary_norm(grid, hv, q) for q in NORMS}
    mass0 = boundary_integral(grid, hv)
    spread0 = boundary_norm(grid, hv - boundary_mean(grid, hv), 1)

    rows = []
    prev_phi = trajectory.phi0
    dissipation = 0.0
    forcing = 0.0
    remainder = 0.0
    drift_bound = 0.0
    energy0 = _energy(grid, f, hv, trajectory.phi0)
    for step, state in zip(trajectory.steps, trajectory.states[1:]):
        t = step.time
        h = state.values
        v_l2 = step.dhdt_norms["2"]
        dissipation += 0.5 * tau * v_l2 ** 2
        forcing += 0.5 * tau * step.source_l2 ** 2
        remainder += 0.5 * omega * tau * tau * v_l2 ** 2
        drift_bound += tau * step.flux_imbalance
        growth = math.exp(omega * t)
        mean = boundary_mean(grid, state)
        row = {
            "time": t,
            "phi": step.phi,
            "phi_decay_margin": prev_phi - step.phi + phi_slack * scale,
            "energy_margin": (energy0 + forcing + remainder + energy_slack * scale
                              - dissipation - _energy(grid, f, h, step.phi)),
            "lq_bound_margin": {
                q: (2.0 + omega * t) / t * growth * h0_norms[q] - step.dhdt_norms[q]
                for q in h0_norms
            },
            "entropy_ratio": (boundary_norm(grid, h - mean, 1) / step.phi
                              if step.phi > 1e-12 * scale else None),
            "converged": step.converged,
        }
        if unforced:
            bound_pointwise = 2.0 * np.abs(hv) / t * (1.0 + decay_slack)
            row.update({
                "mass_drift": abs(step.mass - mass0),
                "mass_drift_bound": drift_bound,
                "phi_time_margin": 2.0 * h0_l2_sq * (1.0 + decay_slack) - step.phi * t,
                "pointwise_ab_margin": float(np.min(bound_pointwise - np.abs(step.step_g))),
                "sup_ab_margin": (2.0 * h0_sup / t * (1.0 + decay_slack)
                                  - float(np.abs(step.step_g).max(initial=0.0))),
            })
        rows.append(row)
        prev_phi = step.phi

    final = trajectory.final.values
    summary = {
        "applies_unforced_checks": unforced,
        "phi_monotone": all(r["phi_decay_margin"] >= 0 for r in rows),
        "energy_inequality": all(r["energy_margin"] >= 0 for r in rows),
        "lq_bound": all(m >= 0 for r in rows for m in r["lq_bound_margin"].values()),
        "long_time_ratio": (boundary_norm(grid, final - boundary_mean(grid, final), 1) / spread0
                            if spread0 > 0 else 0.0),
        "converged": trajectory.converged,
    }
    if unforced:
        summary.update({
            "mass_drift_relative": (max(r["mass_drift"] for r in rows) / max(boundary_norm(grid, hv, 1), 1e-300)
                                    if rows else 0.0),
            "phi_time_bound": all(r["phi_time_margin"] >= 0 for r in rows),
            "sup_ab_bound": all(r["sup_ab_margin"] >= 0 for r in rows),
            "pointwise_ab_bound": all(r["pointwise_ab_margin"] >= 0 for r in rows),
        })
    return {"summary": summary, "steps": rows}


def error_in_norm(grid: Grid, l2_error: float, q) -> float:
    if q == "inf":
        return l2_error / math.sqrt(float(grid.seg_length.min()))
    q = float(q)
    if q <= 2.0:
        return l2_error * grid.perimeter ** (1.0 / q - 0.5)
    return l2_error / float(grid.seg_length.min()) ** (0.5 - 1.0 / q)


def comparison_report(a: Trajectory, b: Trajectory, grid: Grid,
                      omega: Optional[float] = None) -> Dict[str, Any]:
    """Quasi-contraction of two trajectories for q in {1,2,inf}, identity and positive part.

    The slack column propagates each step's certified resolvent error bound.
    """
    require(len(a.steps) == len(b.steps) and a.tau == b.tau,
            "trajectories must share tau and step count")
    if omega is None:
        omega = max(a.f.omega if a.f.kind != "zero" else 0.0,
                    b.f.omega if b.f.kind != "zero" else 0.0)
    tau = a.tau
    parts = {"identity": lambda x: x, "positive": lambda x: np.maximum(x, 0.0)}
    d0 = a.states[0].values - b.states[0].values
    rows = []
    margins = []
    for n, (sa, sb) in enumerate(zip(a.steps, b.steps), start=1):
        t = sa.time
        diff = a.states[n].values - b.states[n].values
        row = {"time": t}
        for name, part in parts.items():
            for q in NORMS:
                lhs = boundary_norm(grid, part(diff), q)
                rhs = math.exp(omega * t) * boundary_norm(grid, part(d0), q)
                slack = 0.0
                for k in range(1, n + 1):
                    growth = math.exp(omega * (t - a.steps[k - 1].time))
                    src = part(a.sources[k - 1] - b.sources[k - 1])
                    rhs += growth * tau * boundary_norm(grid, src, q)
                    slack += growth * error_in_norm(
                        grid, a.steps[k - 1].h_error_l2 + b.steps[k - 1].h_error_l2, q)
                key = f"{name}_{q}"
                row[key] = {"lhs": lhs, "rhs": rhs, "slack": slack, "margin": rhs + slack - lhs}
                margins.append(rhs + slack - lhs)
        rows.append(row)
    ordered = None
    if np.all(d0 <= 0) or np.all(d0 >= 0):
        sign = 1.0 if np.all(d0 >= 0) else -1.0
        ordered = min(float(np.min(sign * (a.states[n].values - b.states[n].values)))
                      for n in range(len(a.states)))
    return {"omega": omega, "min_margin": min(margins) if margins else 0.0,
            "order_margin": ordered, "steps": rows}


def extinction_time(trajectory: Trajectory, grid: Grid, threshold: float = 1e-4) -> Optional[float]:
    """First time with ||h - mean||_inf <= threshold, or None when not reached."""
    for t, state in zip(trajectory.times, trajectory.states):
        spread = np.abs(state.values - boundary_mean(grid, state)).max(initial=0.0)
        if spread <= threshold:
            return t
    return None


def save_trajectory(directory: str, trajectory: Trajectory, grid: Grid,
                    report: Optional[Dict[str, Any]] = None) -> None:
    """One CSV per diagnostic series plus a states directory and report.json."""
    from field_io import save_field_csv, save_json

    os.makedirs(os.path.join(directory, "states"), exist_ok=True)
    steps = trajectory.steps
    series = {
        "times": trajectory.times,
        "mass": [boundary_integral(grid, trajectory.states[0])] + [s.mass for s in steps],
        "phi": [trajectory.phi0] + [s.phi for s in steps],
        "gap": [0.0] + [s.gap for s in steps],
        "dhdt_l1": [s.dhdt_norms["1"] for s in steps],
        "dhdt_l2": [s.dhdt_norms["2"] for s in steps],
        "dhdt_linf": [s.dhdt_norms["inf"] for s in steps],
    }
    for name, values in series.items():
        save_field_csv(os.path.join(directory, f"{name}.csv"), np.asarray(values, dtype=float))
    for n, state in enumerate(trajectory.states):
        save_field_csv(os.path.join(directory, "states", f"state_{n:05d}.csv"), state.values)
    document = {
        "tau": trajectory.tau,
        "f": trajectory.f.to_dict(),
        "steps": [s.to_dict() for s in steps],
        "converged": trajectory.converged,
    }
    if report is not None:
        document["diagnostics"] = report
    save_json(os.path.join(directory, "report.json"), document)
    logger.info(f"EVOLVE | SAVED | dir={directory} | states={len(trajectory.states)}")
