#!/usr/bin/env python3
"""
Relaxed least-gradient solver.

Minimizes  Phi_h(v) = tv(v) + sum_b s_b |h_b - (Tv)_b|  with a first-order
primal-dual iteration on the saddle function

    L(u; z, sigma) = <K u, (z, sigma)> - sum_b s_b F_b*(-sigma_b),
    K u = ( face * (u_head - u_tail) ,  -s_b * u_owner ),

and returns the minimizer together with its dual certificate. ``sigma`` is
the outward boundary flux of z, so it is the co-normal [z, nu].

The engine is shared with the Robin problem (resolvent.py): a boundary term
supplies its value F_b, the conjugate F_b*(-sigma) and the proximal map of the
dual step. The reported gap uses a box-constrained dual bound and is a
certified upper bound on Phi_h(u) - min Phi_h.
"""

import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from errors import InvalidArgument, require
from grid import (BoundaryData, BulkField, DualField, Grid, boundary_values,
                  conormal, gradient, inner_dual, node_values, sup_norm, tv,
                  tv_anisotropic)

logger = logging.getLogger("lsgrad.tvmin")

MODE_ISOTROPIC = "isotropic"
MODE_ANISOTROPIC = "anisotropic"


@dataclass
class SolverOptions:
    """Controls for the primal-dual engine."""
    max_iters: int = 200000
    tolerance: float = 1e-6
    div_tolerance: float = 1e-6
    step_primal: Optional[float] = None
    step_dual: Optional[float] = None
    seed: int = 0
    check_every: int = 50
    power_iters: int = 100

    def validate(self) -> None:
        require(isinstance(self.max_iters, int) and self.max_iters >= 1,
                f"max_iters must be a positive integer, got {self.max_iters!r}")
        require(np.isfinite(self.tolerance) and self.tolerance >= 0,
                f"tolerance must be nonnegative, got {self.tolerance!r}")
        require(np.isfinite(self.div_tolerance) and self.div_tolerance >= 0,
                f"div_tolerance must be nonnegative, got {self.div_tolerance!r}")
        require(isinstance(self.check_every, int) and self.check_every >= 1,
                "check_every must be a positive integer")
        require(isinstance(self.power_iters, int) and self.power_iters >= 1,
                "power_iters must be a positive integer")
        for name in ("step_primal", "step_dual"):
            value = getattr(self, name)
            require(value is None or (np.isfinite(value) and value > 0),
                    f"{name} must be a positive real, got {value!r}")
        require((self.step_primal is None) == (self.step_dual is None),
                "step_primal and step_dual must be given together")

    def with_updates(self, **changes) -> "SolverOptions":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SolverOptions":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown solver option(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class CertificateReport:
    """Measured defects of a (u, z) pair against Dirichlet data h."""
    z_sup: float
    div_residual: float
    pairing_defect: float
    sign_defect: float
    weighted_sign_defect: float

    def passed(self, tolerance: float) -> bool:
        return (self.z_sup <= 1.0 + 1e-12
                and self.div_residual <= tolerance
                and self.pairing_defect <= tolerance
                and self.sign_defect <= tolerance)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TvSolution:
    u: BulkField
    z: DualField
    s: BoundaryData
    primal_energy: float
    dual_energy: float
    gap: float
    iterations: int
    div_residual: float
    converged: bool
    scale: float
    mode: str = MODE_ISOTROPIC
    seed: int = 0

    def to_report(self) -> Dict[str, Any]:
        return {
            "primal_energy": self.primal_energy,
            "dual_energy": self.dual_energy,
            "gap": self.gap,
            "iterations": self.iterations,
            "div_residual": self.div_residual,
            "converged": self.converged,
            "scale": self.scale,
            "mode": self.mode,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class DirichletTerm:
    """F_b(t) = |h_b - t|."""
    name = "dirichlet"

    def __init__(self, h: np.ndarray):
        self.h = h

    def bounds(self) -> Tuple[float, float]:
        return float(self.h.min()), float(self.h.max())

    def scale(self) -> float:
        return float(np.abs(self.h).max(initial=0.0))

    def value(self, t: np.ndarray) -> np.ndarray:
        return np.abs(self.h - t)

    def conjugate(self, sigma: np.ndarray) -> np.ndarray:
        """F_b*(-sigma_b) on |sigma_b| <= 1."""
        return -sigma * self.h

    def prox(self, v: np.ndarray, step: np.ndarray) -> np.ndarray:
        return np.clip(v + step * self.h, -1.0, 1.0)


@dataclass(eq=False)
class EngineState:
    u: np.ndarray
    z: np.ndarray
    sigma: np.ndarray
    primal: float
    dual: float
    gap: float
    div_residual: float
    iterations: int
    converged: bool
    scale: float
    tau: float = 0.0
    step: float = 0.0
    history: list = field(default_factory=list)


def _gershgorin_bound(grid: Grid) -> float:
    m = grid.num_nodes
    face_sq = 2.0 * grid.edge_face ** 2
    rows = (np.bincount(grid.edge_tail, face_sq, minlength=m)
            + np.bincount(grid.edge_head, face_sq, minlength=m)
            + np.bincount(grid.seg_owner, grid.seg_length ** 2, minlength=m))
    return float(rows.max())


def operator_norm_sq(grid: Grid, iters: int = 100, seed: int = 0) -> float:
    """Estimate of ||K||^2: min(Gershgorin bound, 1.1 * power iteration)."""
    apply_k, apply_kt = _operators(grid)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(grid.num_nodes)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iters):
        y = apply_kt(*apply_k(x))
        estimate = float(x @ y)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            break
        x = y / nrm
    return min(_gershgorin_bound(grid), 1.1 * estimate) if estimate > 0 else _gershgorin_bound(grid)


def _operators(grid: Grid):
    m = grid.num_nodes
    face, ell = grid.edge_face, grid.seg_length
    tail, head, owner = grid.edge_tail, grid.edge_head, grid.seg_owner

    def apply_k(u):
        return face * (u[head] - u[tail]), -ell * u[owner]

    def apply_kt(z, sigma):
        fz = face * z
        return (np.bincount(head, fz, minlength=m)
                - np.bincount(tail, fz, minlength=m)
                - np.bincount(owner, ell * sigma, minlength=m))

    return apply_k, apply_kt


def _k_matrix(grid: Grid) -> sp.csr_matrix:
    e, s = grid.num_edges, grid.num_segments
    rows = np.concatenate([np.arange(e), np.arange(e), e + np.arange(s)])
    cols = np.concatenate([grid.edge_head, grid.edge_tail, grid.seg_owner])
    vals = np.concatenate([grid.edge_face, -grid.edge_face, -grid.seg_length])
    return sp.csr_matrix((vals, (rows, cols)), shape=(e + s, grid.num_nodes))


def divergence_free_part(grid: Grid, anisotropic: bool = False):
    """Map (z, sigma) to a divergence-free pair inside the dual unit ball.

    Subtracts K phi with K^T K phi = K^T y (exact projection onto ker K^T,
    one sparse factorization per grid), then rescales into the ball.
    """
    k = _k_matrix(grid)
    solve = factorized((k.T @ k).tocsc())
    apply_k, apply_kt = _operators(grid)

    def repair(z, sigma):
        phi = solve(apply_kt(z, sigma))
        dz, ds = apply_k(phi)
        z2, s2 = z - dz, sigma - ds
        excess = max(_location_sup(grid, z2, anisotropic), float(np.abs(s2).max(initial=0.0)), 1.0)
        return z2 / excess, s2 / excess

    return repair


def _location_sup(grid: Grid, z: np.ndarray, anisotropic: bool) -> float:
    if anisotropic:
        return float(np.abs(z).max(initial=0.0))
    return float(np.sqrt(np.bincount(grid.edge_tail, z * z, minlength=grid.num_nodes)).max(initial=0.0))


def run_engine(grid: Grid, term, opts: SolverOptions, *, anisotropic: bool = False,
               warm: Optional[EngineState] = None, label: str = "TVMIN") -> EngineState:
    """Chambolle-Pock iteration for min_u tv(u) + sum_b s_b F_b((Tu)_b).

    Every ``check_every`` iterations the last and the running-average
    iterates are measured, together with the divergence-free parts of their
    duals; the lowest primal and the highest certified dual are kept. The
    average restarts the iteration whenever its gap has halved since the
    previous restart.
    """
    opts.validate()
    lower, upper = term.bounds()
    m = grid.num_nodes
    ell = grid.seg_length
    tail, owner = grid.edge_tail, grid.seg_owner
    apply_k, apply_kt = _operators(grid)
    tv_fn = tv_anisotropic if anisotropic else tv
    norm_sq = operator_norm_sq(grid, opts.power_iters, opts.seed)
    if opts.step_primal is not None:
        tau, step = float(opts.step_primal), float(opts.step_dual)
        if tau * step * norm_sq > 1.0:
            raise InvalidArgument(
                f"step_primal*step_dual*||K||^2 = {tau * step * norm_sq:.4g} exceeds 1")
    else:
        tau = step = 0.99 / np.sqrt(norm_sq)
    scale = grid.perimeter * term.scale()
    floor = max(1e-8 * scale, 1e-300)
    div_limit = opts.div_tolerance * scale
    areas = grid.areas
    repair = divergence_free_part(grid, anisotropic)

    if anisotropic:
        def project(z):
            return np.clip(z, -1.0, 1.0)
    else:
        def project(z):
            nrm = np.sqrt(np.bincount(tail, z * z, minlength=m))
            return z / np.maximum(nrm, 1.0)[tail]

    if warm is not None:
        u = np.clip(np.array(warm.u, dtype=float), lower, upper)
        z = project(np.array(warm.z, dtype=float))
        sigma = np.clip(np.array(warm.sigma, dtype=float), -1.0, 1.0)
    else:
        rng = np.random.default_rng(opts.seed)
        u = rng.uniform(lower, upper, m) if upper > lower else np.full(m, lower)
        z = np.zeros(grid.num_edges)
        sigma = np.zeros(grid.num_segments)
    u_bar = u.copy()

    def primal_of(u):
        return tv_fn(grid, u) + float(np.sum(ell * term.value(u[owner])))

    def dual_of(z, sigma):
        r = apply_kt(z, sigma)
        dual = (-float(np.sum(ell * term.conjugate(sigma)))
                + float(np.sum(lower * np.maximum(r, 0.0) + upper * np.minimum(r, 0.0))))
        return dual, float((np.abs(r) / areas).max(initial=0.0))

    u_sum, z_sum, s_sum, count = np.zeros(m), np.zeros_like(z), np.zeros_like(sigma), 0
    restart_gap = np.inf
    restarts = 0
    best = None
    history = []
    iterations = 0
    for k in range(1, opts.max_iters + 1):
        dz, ds = apply_k(u_bar)
        z = project(z + step * dz)
        sigma = term.prox(sigma + step * ds, step * ell)
        u_new = np.clip(u - tau * apply_kt(z, sigma), lower, upper)
        u_bar = 2.0 * u_new - u
        u = u_new
        u_sum += u
        z_sum += z
        s_sum += sigma
        count += 1
        iterations = k
        if k % opts.check_every and k != opts.max_iters:
            continue

        u_avg, z_avg, s_avg = u_sum / count, z_sum / count, s_sum / count
        p_last, p_avg = primal_of(u), primal_of(u_avg)
        primal = min(p_last, p_avg)
        target = opts.tolerance * max(abs(primal), floor)
        candidates = [(zc, sc, *dual_of(zc, sc)) for zc, sc in
                      ((z, sigma), (z_avg, s_avg), repair(z, sigma), repair(z_avg, s_avg))]
        z_pick, s_pick, dual, div_res = max(
            candidates, key=lambda c: (c[3] <= div_limit and primal - c[2] <= target, c[2], -c[3]))
        gap = primal - dual
        history.append((k, gap))
        converged = div_res <= div_limit and gap <= target
        if best is None or gap < best.gap or converged:
            best = EngineState(u=(u if p_last <= p_avg else u_avg).copy(), z=z_pick.copy(),
                               sigma=s_pick.copy(), primal=primal, dual=dual, gap=gap,
                               div_residual=div_res, iterations=k, converged=converged,
                               scale=scale, tau=tau, step=step)
        logger.debug(f"{label} | CHECK | iter={k} | primal={primal:.10g} | gap={gap:.3e} | div={div_res:.3e}")
        if converged:
            break

        last_gap = p_last - candidates[0][2]
        avg_gap = p_avg - candidates[1][2]
        if min(last_gap, avg_gap) <= 0.5 * restart_gap:
            if avg_gap < last_gap:
                u, z, sigma = u_avg, z_avg.copy(), s_avg.copy()
                u_bar = u.copy()
                restarts += 1
            restart_gap = min(last_gap, avg_gap)
            u_sum, z_sum, s_sum, count = np.zeros(m), np.zeros_like(z), np.zeros_like(sigma), 0

    best.history = history
    best.iterations = iterations
    if best.converged:
        logger.info(f"{label} | DONE | iters={iterations} | primal={best.primal:.10g} | "
                    f"gap={best.gap:.3e} | div={best.div_residual:.3e} | restarts={restarts} | converged=True")
    else:
        logger.warning(f"{label} | NOT_CONVERGED | iters={iterations} | primal={best.primal:.10g} | "
                       f"gap={best.gap:.3e} | div={best.div_residual:.3e} | restarts={restarts}")
    return best


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def energy_phi_h(grid: Grid, h, u) -> float:
    """Phi_h(u) = tv(u) + sum_b s_b |h_b - (Tu)_b|."""
    hv = boundary_values(grid, h)
    uv = node_values(grid, u)
    return tv(grid, uv) + float(np.sum(grid.seg_length * np.abs(hv - uv[grid.seg_owner])))


def energy_phi_h_anisotropic(grid: Grid, h, u) -> float:
    hv = boundary_values(grid, h)
    uv = node_values(grid, u)
    return tv_anisotropic(grid, uv) + float(np.sum(grid.seg_length * np.abs(hv - uv[grid.seg_owner])))


def _to_solution(grid: Grid, state: EngineState, primal: float, mode: str, seed: int) -> TvSolution:
    return TvSolution(
        u=BulkField(state.u),
        z=DualField(edge=state.z, boundary=state.sigma),
        s=BoundaryData(state.sigma),
        primal_energy=primal,
        dual_energy=state.dual,
        gap=primal - state.dual,
        iterations=state.iterations,
        div_residual=state.div_residual,
        converged=state.converged,
        scale=state.scale,
        mode=mode,
        seed=seed,
    )


def _warm_state(grid: Grid, warm: Optional[TvSolution]) -> Optional[EngineState]:
    if warm is None:
        return None
    return EngineState(u=warm.u.values, z=warm.z.edge, sigma=warm.z.boundary, primal=0.0,
                       dual=0.0, gap=np.inf, div_residual=np.inf, iterations=0,
                       converged=False, scale=0.0)


def solve_relaxed_dirichlet(grid: Grid, h, opts: Optional[SolverOptions] = None, *,
                            warm: Optional[TvSolution] = None, bus=None) -> TvSolution:
    """Minimize Phi_h and return (u, z) with a certified duality gap.

    Non-convergence within ``opts.max_iters`` returns the best iterate with
    ``converged=False``; callers must check the flag.
    """
    opts = opts or SolverOptions()
    hv = boundary_values(grid, h)
    state = run_engine(grid, DirichletTerm(hv), opts, warm=_warm_state(grid, warm))
    sol = _to_solution(grid, state, energy_phi_h(grid, hv, state.u), MODE_ISOTROPIC, opts.seed)
    if bus is not None:
        bus.emit("SOLVE_DONE", {"kind": "dirichlet", **sol.to_report()})
    return sol


def _solve_relaxed_dirichlet_anisotropic(grid: Grid, h, opts: Optional[SolverOptions] = None) -> TvSolution:
    """Same problem with the l1 edge norm; exists to compare with the exact oracle."""
    opts = opts or SolverOptions()
    hv = boundary_values(grid, h)
    state = run_engine(grid, DirichletTerm(hv), opts, anisotropic=True, label="TVMIN_ANISO")
    primal = energy_phi_h_anisotropic(grid, hv, state.u)
    return _to_solution(grid, state, primal, MODE_ANISOTROPIC, opts.seed)


def certify_pair(grid: Grid, h, u, z: DualField) -> CertificateReport:
    """Defects of the discrete optimality system for an arbitrary (u, z)."""
    hv = boundary_values(grid, h)
    uv = node_values(grid, u)
    g = conormal(grid, z).values
    apply_k, apply_kt = _operators(grid)
    r = apply_kt(z.edge, z.boundary)
    residual = hv - uv[grid.seg_owner]
    sign_gap = np.maximum(np.abs(residual) - g * residual, 0.0)
    return CertificateReport(
        z_sup=sup_norm(grid, z),
        div_residual=float((np.abs(r) / grid.areas).max(initial=0.0)),
        pairing_defect=abs(inner_dual(grid, gradient(grid, uv), z) - tv(grid, uv)),
        sign_defect=float(sign_gap.max(initial=0.0)),
        weighted_sign_defect=float(np.sum(grid.seg_length * sign_gap)),
    )


def certify(grid: Grid, h, sol: TvSolution) -> CertificateReport:
    return certify_pair(grid, h, sol.u, sol.z)


def save_solution(directory: str, grid: Grid, h, sol: TvSolution,
                  extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Write u.csv, z.csv, g.csv and report.json into ``directory``."""
    from field_io import save_field_csv, save_json

    os.makedirs(directory, exist_ok=True)
    report = sol.to_report()
    report["certificate"] = certify(grid, h, sol).to_dict()
    report["grid"] = grid.summary()
    if extra:
        report.update(extra)
    save_field_csv(os.path.join(directory, "u.csv"), sol.u.values)
    save_field_csv(os.path.join(directory, "z.csv"), sol.z.stacked())
    save_field_csv(os.path.join(directory, "g.csv"), conormal(grid, sol.z).values)
    save_json(os.path.join(directory, "report.json"), report)
    logger.info(f"TVMIN | SAVED | dir={directory} | converged={sol.converged}")
    return report


def dirichlet_bounds(grid: Grid, h, u, z: DualField) -> Tuple[float, float]:
    """Certified (lower, upper) bounds on min Phi_h from any feasible pair.

    ``upper`` is Phi_h(u); ``lower`` is the box-constrained dual value of
    (z, [z, nu]). Requires the location norms of z and |[z, nu]| to be <= 1.
    """
    hv = boundary_values(grid, h)
    _, apply_kt = _operators(grid)
    r = apply_kt(z.edge, z.boundary)
    lo, hi = float(hv.min()), float(hv.max())
    lower = (float(np.sum(grid.seg_length * z.boundary * hv))
             + float(np.sum(lo * np.maximum(r, 0.0) + hi * np.minimum(r, 0.0))))
    return lower, energy_phi_h(grid, hv, u)
