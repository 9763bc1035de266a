#!/usr/bin/env python3
"""
Truncated Robin problem and the resolvent (I + lambda*Lambda)^-1.

The Robin problem minimizes tv(u) + sum_b s_b Gamma(g_b, alpha, (Tu)_b) where
Gamma is the convex antiderivative of -T1(g - alpha*t), so the boundary
condition at the optimum reads [z, nu] = T1(g - alpha*Tu). It runs on the
primal-dual engine of tvmin with a closed-form boundary proximal map.

The resolvent solves the Robin problem with data g/lambda and coefficient
1/lambda. Then [z, nu] = T1((g - Tu)/lambda) and h = g - lambda*[z, nu] is the
proximal point of lambda*phi at g, the exact discrete resolvent.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from errors import require
from grid import (BoundaryData, BulkField, DualField, Grid, boundary_values,
                  node_values, tv)
from tvmin import (CertificateReport, EngineState, SolverOptions, certify_pair,
                   run_engine)

logger = logging.getLogger("lsgrad.resolvent")

Number = Union[float, np.ndarray]


def truncator(s: Number) -> Number:
    """T1(s) = s on [-1, 1], sign(s) outside."""
    out = np.clip(s, -1.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def _huber(s: np.ndarray) -> np.ndarray:
    a = np.abs(s)
    return np.where(a <= 1.0, 0.5 * s * s, a - 0.5)


def gamma_potential(g_b: Number, alpha: float, t: Number) -> Number:
    """Gamma(t) = int_0^t -T1(g_b - alpha*r) dr, in closed form.

    Quadratic while |alpha*r - g_b| <= 1, linear with slope +-1 beyond.
    """
    require(alpha > 0, f"alpha must be positive, got {alpha!r}")
    g = np.asarray(g_b, dtype=float)
    tt = np.asarray(t, dtype=float)
    out = (_huber(alpha * tt - g) - _huber(-g)) / alpha
    return float(out) if np.ndim(out) == 0 else out


class RobinTerm:
    """F_b(t) = Gamma(g_b, alpha, t)."""
    name = "robin"

    def __init__(self, g: np.ndarray, alpha: float):
        self.g = g
        self.alpha = float(alpha)

    def bounds(self) -> Tuple[float, float]:
        return float(self.g.min()) / self.alpha, float(self.g.max()) / self.alpha

    def scale(self) -> float:
        return float(np.abs(self.g).max(initial=0.0)) / self.alpha

    def value(self, t: np.ndarray) -> np.ndarray:
        return (_huber(self.alpha * t - self.g) - _huber(-self.g)) / self.alpha

    def conjugate(self, sigma: np.ndarray) -> np.ndarray:
        return (0.5 * sigma * sigma - self.g * sigma + _huber(-self.g)) / self.alpha

    def prox(self, v: np.ndarray, step: np.ndarray) -> np.ndarray:
        ratio = step / self.alpha
        return np.clip((v + ratio * self.g) / (1.0 + ratio), -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class RobinSolution:
    u: BulkField
    z: DualField
    conormal_g: BoundaryData
    alpha: float
    primal_energy: float
    dual_energy: float
    gap: float
    div_residual: float
    iterations: int
    converged: bool
    boundary_defect: float

    def to_report(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "primal_energy": self.primal_energy,
            "dual_energy": self.dual_energy,
            "gap": self.gap,
            "div_residual": self.div_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "boundary_defect": self.boundary_defect,
        }

    def engine_state(self) -> EngineState:
        """Warm-start handle for a follow-up solve."""
        return EngineState(u=self.u.values, z=self.z.edge, sigma=self.z.boundary,
                           primal=self.primal_energy, dual=self.dual_energy, gap=self.gap,
                           div_residual=self.div_residual, iterations=self.iterations,
                           converged=self.converged, scale=0.0)


def robin_energy(grid: Grid, g, alpha: float, u) -> float:
    gv = boundary_values(grid, g, "g")
    uv = node_values(grid, u)
    term = RobinTerm(gv, alpha)
    return tv(grid, uv) + float(np.sum(grid.seg_length * term.value(uv[grid.seg_owner])))


def boundary_condition_defect(grid: Grid, g, alpha: float, u, z: DualField) -> float:
    """max_b |[z,nu]_b - T1(g_b - alpha*(Tu)_b)|."""
    gv = boundary_values(grid, g, "g")
    uv = node_values(grid, u)
    return float(np.abs(z.boundary - np.clip(gv - alpha * uv[grid.seg_owner], -1.0, 1.0)).max(initial=0.0))


def solve_robin(grid: Grid, g, alpha: float, opts: Optional[SolverOptions] = None, *,
                warm: Optional[RobinSolution] = None, bus=None) -> RobinSolution:
    """Minimize tv(u) + sum_b s_b Gamma(g_b, alpha, (Tu)_b)."""
    require(np.isfinite(alpha) and alpha > 0, f"alpha must be a positive real, got {alpha!r}")
    opts = opts or SolverOptions()
    gv = boundary_values(grid, g, "g")
    state = run_engine(grid, RobinTerm(gv, alpha), opts,
                       warm=warm.engine_state() if warm is not None else None, label="ROBIN")
    z = DualField(edge=state.z, boundary=state.sigma)
    sol = RobinSolution(
        u=BulkField(state.u),
        z=z,
        conormal_g=BoundaryData(state.sigma),
        alpha=float(alpha),
        primal_energy=state.primal,
        dual_energy=state.dual,
        gap=state.primal - state.dual,
        div_residual=state.div_residual,
        iterations=state.iterations,
        converged=state.converged,
        boundary_defect=boundary_condition_defect(grid, gv, alpha, state.u, z),
    )
    if bus is not None:
        bus.emit("SOLVE_DONE", {"kind": "robin", **sol.to_report()})
    return sol


@dataclass(frozen=True, eq=False)
class ResolventRecord:
    """Outcome of one resolvent application h = J_lambda(g)."""
    g: BoundaryData
    h: BoundaryData
    lam: float
    conormal_g: BoundaryData
    robin: RobinSolution
    h_error_l2: float
    certificate: CertificateReport

    @property
    def converged(self) -> bool:
        return self.robin.converged

    def to_report(self) -> Dict[str, Any]:
        return {
            "lambda": self.lam,
            "h_error_l2": self.h_error_l2,
            "max_step": float(np.abs(self.h.values - self.g.values).max(initial=0.0)),
            "robin": self.robin.to_report(),
            "certificate": self.certificate.to_dict(),
        }


def resolvent_apply(grid: Grid, g, lam: float, opts: Optional[SolverOptions] = None, *,
                    warm: Optional[RobinSolution] = None, bus=None) -> Tuple[BoundaryData, ResolventRecord]:
    """h = (I + lam*Lambda)^-1 g via the Robin problem.

    ``h_error_l2`` bounds ||h - J_lam(g)||_{L2(dOmega)} from the Robin gap:
    the dual is (s_b*lam)-strongly concave in [z, nu].
    """
    require(np.isfinite(lam) and lam > 0, f"lambda must be a positive real, got {lam!r}")
    gv = boundary_values(grid, g, "g")
    robin = solve_robin(grid, gv / lam, 1.0 / lam, opts, warm=warm, bus=bus)
    flux = robin.conormal_g.values
    h = BoundaryData(gv - lam * flux)
    error = float(np.sqrt(2.0 * lam * max(robin.gap, 0.0)))
    record = ResolventRecord(
        g=BoundaryData(gv),
        h=h,
        lam=float(lam),
        conormal_g=robin.conormal_g,
        robin=robin,
        h_error_l2=error,
        certificate=certify_pair(grid, h, robin.u, robin.z),
    )
    logger.info(f"RESOLVENT | APPLY | lambda={lam:g} | gap={robin.gap:.3e} | "
                f"h_error_l2={error:.3e} | converged={robin.converged}")
    return h, record
