#!/usr/bin/env python3
"""
Regularized p-Laplace Robin problems, 1 < p <= 2, solved by damped Newton.

Discrete energy

    J_p(u) = sum_c (w_c / p) (|G u|_c^2 + eps^2)^(p/2) + sum_b s_b Gamma(g_b, alpha, (Tu)_b)

with |G u|_c the Euclidean norm of the cell's east/north difference
quotients. grad J_p = 0 is the discrete weak form with boundary flux
T1(g - alpha*Tu). The boundary Hessian is the generalized (semismooth)
derivative of the truncation.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from errors import InvalidArgument, require
from grid import BoundaryData, BulkField, Grid, boundary_values, node_values
from resolvent import RobinSolution, gamma_potential, solve_robin
from tvmin import SolverOptions

logger = logging.getLogger("lsgrad.plap")


@dataclass
class PlapOptions:
    p: float = 1.5
    epsilon: Optional[float] = None
    newton_tol: float = 1e-9
    max_newton: int = 200
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-10

    def validate(self) -> None:
        require(np.isfinite(self.p) and 1.0 < self.p <= 2.0, f"p must lie in (1, 2], got {self.p!r}")
        require(self.epsilon is None or (np.isfinite(self.epsilon) and self.epsilon > 0),
                f"epsilon must be positive, got {self.epsilon!r}")
        require(self.newton_tol > 0, "newton_tol must be positive")
        require(isinstance(self.max_newton, int) and self.max_newton >= 1,
                "max_newton must be a positive integer")
        require(0.0 < self.armijo < 0.5, "armijo must lie in (0, 0.5)")
        require(0.0 < self.backtrack < 1.0, "backtrack must lie in (0, 1)")

    def resolved_epsilon(self, data_scale: float) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return 1e-6 * max(data_scale, 1e-12)

    def with_updates(self, **changes) -> "PlapOptions":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PlapOptions":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown plap option(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class PlapResult:
    u: BulkField
    p: float
    epsilon: float
    iterations: int
    converged: bool
    residual: float
    residual_history: List[float] = field(default_factory=list)
    energy_history: List[float] = field(default_factory=list)
    flux: Optional[BoundaryData] = None

    def to_report(self) -> Dict[str, Any]:
        return {
            "p": self.p,
            "epsilon": self.epsilon,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "residual_history": list(self.residual_history),
            "energy_history": list(self.energy_history),
        }


class _PlapProblem:
    """Energy, gradient and Hessian of J_p on one grid."""

    def __init__(self, grid: Grid, g: np.ndarray, alpha: float, p: float, eps: float):
        self.grid = grid
        self.g = g
        self.alpha = alpha
        self.p = p
        self.eps = eps
        m = grid.num_nodes
        self.weight = grid.spacing ** 2
        self.gx = self._difference(0)
        self.gy = self._difference(1)
        self.trace = sp.csr_matrix(
            (np.ones(grid.num_segments), (np.arange(grid.num_segments), grid.seg_owner)),
            shape=(grid.num_segments, m))
        self.ell = grid.seg_length

    def _difference(self, axis: int) -> sp.csr_matrix:
        grid = self.grid
        sel = np.nonzero(grid.edge_axis == axis)[0]
        tail, head = grid.edge_tail[sel], grid.edge_head[sel]
        inv = 1.0 / grid.edge_length[sel]
        rows = np.concatenate([tail, tail])
        cols = np.concatenate([head, tail])
        data = np.concatenate([inv, -inv])
        return sp.csr_matrix((data, (rows, cols)), shape=(grid.num_nodes, grid.num_nodes))

    def _parts(self, u):
        qx = self.gx @ u
        qy = self.gy @ u
        rho = qx * qx + qy * qy + self.eps * self.eps
        return qx, qy, rho

    def energy(self, u: np.ndarray) -> float:
        _, _, rho = self._parts(u)
        bulk = self.weight / self.p * float(np.sum(rho ** (0.5 * self.p)))
        t = self.trace @ u
        return bulk + float(np.sum(self.ell * gamma_potential(self.g, self.alpha, t)))

    def flux(self, u: np.ndarray) -> np.ndarray:
        return np.clip(self.g - self.alpha * (self.trace @ u), -1.0, 1.0)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        qx, qy, rho = self._parts(u)
        kappa = self.weight * rho ** (0.5 * self.p - 1.0)
        return (self.gx.T @ (kappa * qx) + self.gy.T @ (kappa * qy)
                - self.trace.T @ (self.ell * self.flux(u)))

    def hessian(self, u: np.ndarray) -> sp.csr_matrix:
        qx, qy, rho = self._parts(u)
        kappa = rho ** (0.5 * self.p - 1.0)
        curv = (self.p - 2.0) * rho ** (0.5 * self.p - 2.0)
        w = self.weight
        dxx = sp.diags(w * (kappa + curv * qx * qx))
        dyy = sp.diags(w * (kappa + curv * qy * qy))
        dxy = sp.diags(w * curv * qx * qy)
        bulk = (self.gx.T @ dxx @ self.gx + self.gy.T @ dyy @ self.gy
                + self.gx.T @ dxy @ self.gy + self.gy.T @ dxy @ self.gx)
        t = self.trace @ u
        active = (np.abs(self.alpha * t - self.g) < 1.0).astype(float)
        boundary = self.trace.T @ sp.diags(self.ell * self.alpha * active) @ self.trace
        return (bulk + boundary).tocsr()


def solve_robin_p(grid: Grid, g, alpha: float, opts: Optional[PlapOptions] = None, *,
                  warm=None) -> PlapResult:
    """Damped Newton with Armijo backtracking; energy is nonincreasing."""
    opts = opts or PlapOptions()
    opts.validate()
    require(np.isfinite(alpha) and alpha > 0, f"alpha must be a positive real, got {alpha!r}")
    gv = boundary_values(grid, g, "g")
    data_scale = float(np.abs(gv).max(initial=0.0)) / alpha
    eps = opts.resolved_epsilon(data_scale)
    problem = _PlapProblem(grid, gv, float(alpha), float(opts.p), eps)

    if warm is not None:
        u = np.array(node_values(grid, getattr(warm, "u", warm)), dtype=float)
    else:
        u = np.full(grid.num_nodes, float(np.sum(grid.seg_length * gv) / grid.perimeter) / alpha)

    identity = sp.identity(grid.num_nodes, format="csr")
    residuals: List[float] = []
    energies: List[float] = [problem.energy(u)]
    converged = False
    iterations = 0
    for it in range(opts.max_newton):
        grad = problem.gradient(u)
        residual = float(np.abs(grad).max(initial=0.0) / grid.spacing)
        residuals.append(residual)
        if residual <= opts.newton_tol:
            converged = True
            break
        hess = problem.hessian(u)
        shift = 1e-12 * max(float(hess.diagonal().max()), 1e-300)
        direction = spsolve((hess + shift * identity).tocsc(), -grad)
        slope = float(grad @ direction)
        if not np.all(np.isfinite(direction)) or slope >= 0.0:
            direction = -grad
            slope = -float(grad @ grad)
        current = energies[-1]
        step = 1.0
        roundoff = 1e-13 * max(1.0, abs(current))
        while True:
            trial = u + step * direction
            value = problem.energy(trial)
            if value <= current + opts.armijo * step * slope + roundoff:
                break
            step *= opts.backtrack
            if step < opts.min_step:
                break
        iterations = it + 1
        if step < opts.min_step:
            logger.warning(f"PLAP | LINE_SEARCH_STALLED | p={opts.p:g} | iter={iterations} | residual={residual:.3e}")
            break
        u = trial
        energies.append(min(value, current))
        logger.debug(f"PLAP | NEWTON | p={opts.p:g} | iter={iterations} | step={step:.3g} | residual={residual:.3e}")

    result = PlapResult(
        u=BulkField(u),
        p=float(opts.p),
        epsilon=eps,
        iterations=iterations,
        converged=converged,
        residual=residuals[-1] if residuals else float("inf"),
        residual_history=residuals,
        energy_history=energies,
        flux=BoundaryData(problem.flux(u)),
    )
    level = logging.INFO if converged else logging.WARNING
    logger.log(level, f"PLAP | DONE | p={opts.p:g} | eps={eps:.3g} | iters={iterations} | "
                      f"residual={result.residual:.3e} | converged={converged}")
    return result


def plap_energy(grid: Grid, g, alpha: float, u, p: float, epsilon: float) -> float:
    gv = boundary_values(grid, g, "g")
    return _PlapProblem(grid, gv, float(alpha), float(p), float(epsilon)).energy(node_values(grid, u))


def _check_schedule(schedule: Sequence[float]) -> List[float]:
    values = [float(p) for p in schedule]
    require(len(values) >= 1, "p_schedule must not be empty")
    for p in values:
        require(1.0 < p <= 2.0, f"p_schedule entries must lie in (1, 2], got {p}")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise InvalidArgument(f"p_schedule must be strictly decreasing, got {values}")
    return values


def _distance(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(grid.areas * np.abs(a - b)) / grid.total_area)


def continuation(grid: Grid, g, alpha: float, p_schedule: Sequence[float],
                 opts: Optional[PlapOptions] = None, tv_opts: Optional[SolverOptions] = None, *,
                 tv_solution: Optional[RobinSolution] = None) -> Dict[str, Any]:
    """Warm-started sweep p -> 1 compared against the TV Robin solution."""
    schedule = _check_schedule(p_schedule)
    opts = opts or PlapOptions()
    gv = boundary_values(grid, g, "g")
    reference = tv_solution or solve_robin(grid, gv, alpha, tv_opts)
    entries = []
    warm = None
    for p in schedule:
        res = solve_robin_p(grid, gv, alpha, opts.with_updates(p=p), warm=warm)
        entries.append({
            "p": p,
            "distance_l1": _distance(grid, res.u.values, reference.u.values),
            "flux_deviation": float(np.abs(res.flux.values - reference.conormal_g.values).max(initial=0.0)),
            "u_sup": float(np.abs(res.u.values).max(initial=0.0)),
            "iterations": res.iterations,
            "residual": res.residual,
            "converged": res.converged,
        })
        warm = res
    logger.info(f"PLAP | CONTINUATION | schedule={schedule} | "
                f"distances={[round(e['distance_l1'], 6) for e in entries]}")
    return {
        "alpha": float(alpha),
        "tv": reference.to_report(),
        "entries": entries,
        "converged": reference.converged and all(e["converged"] for e in entries),
    }


def epsilon_sensitivity(grid: Grid, g, alpha: float, p: float, epsilons: Sequence[float],
                        opts: Optional[PlapOptions] = None, tv_opts: Optional[SolverOptions] = None, *,
                        tv_solution: Optional[RobinSolution] = None) -> Dict[str, Any]:
    """Distance to the TV solution for a sweep of regularization levels."""
    opts = opts or PlapOptions()
    gv = boundary_values(grid, g, "g")
    reference = tv_solution or solve_robin(grid, gv, alpha, tv_opts)
    entries = []
    warm = None
    for eps in epsilons:
        res = solve_robin_p(grid, gv, alpha, opts.with_updates(p=p, epsilon=float(eps)), warm=warm)
        entries.append({"epsilon": float(eps),
                        "distance_l1": _distance(grid, res.u.values, reference.u.values),
                        "converged": res.converged})
        warm = res
    changes = [abs(b["distance_l1"] - a["distance_l1"]) for a, b in zip(entries, entries[1:])]
    return {"p": float(p), "entries": entries, "distance_changes": changes}
