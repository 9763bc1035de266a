#!/usr/bin/env python3
"""
Dirichlet-to-Neumann evaluation: a certified selection g = [z, nu] in Lambda(h)
and the energy phi(h) = <g, h> = min Phi_h, plus the structural checks
(homogeneity, evenness, accretivity pairing, stability, entropy-transport).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from errors import require
from grid import (BoundaryData, Grid, boundary_integral, boundary_mean,
                  boundary_norm, boundary_values, conormal, inner_boundary)
from tvmin import (CertificateReport, SolverOptions, TvSolution, certify,
                   certify_pair, solve_relaxed_dirichlet)

logger = logging.getLogger("lsgrad.dtn")

TRUNCATION_SLOPES = (1.0, 10.0, 100.0)


@dataclass(frozen=True, eq=False)
class DtNRecord:
    h: BoundaryData
    g: BoundaryData
    phi: float
    solution: TvSolution
    certificate: CertificateReport
    total_flux: float

    @property
    def converged(self) -> bool:
        return self.solution.converged

    def invariants(self, grid: Grid) -> Dict[str, float]:
        """Measured residual of every record invariant."""
        return {
            "g_sup_excess": max(float(np.abs(self.g.values).max(initial=0.0)) - 1.0, 0.0),
            "phi_minus_primal": abs(self.phi - self.solution.primal_energy),
            "total_flux": abs(self.total_flux),
            "flux_bound": self.solution.div_residual * grid.total_area,
        }

    def to_report(self, grid: Grid) -> Dict[str, Any]:
        return {
            "phi": self.phi,
            "total_flux": self.total_flux,
            "solution": self.solution.to_report(),
            "certificate": self.certificate.to_dict(),
            "invariants": self.invariants(grid),
        }


def evaluate(grid: Grid, h, opts: Optional[SolverOptions] = None, *,
             warm: Optional[TvSolution] = None, bus=None) -> DtNRecord:
    """Solve the relaxed problem and read off g = [z, nu] and phi = <g, h>."""
    hv = boundary_values(grid, h)
    sol = solve_relaxed_dirichlet(grid, hv, opts, warm=warm, bus=bus)
    g = conormal(grid, sol.z)
    record = DtNRecord(
        h=BoundaryData(hv),
        g=g,
        phi=inner_boundary(grid, g, hv),
        solution=sol,
        certificate=certify(grid, hv, sol),
        total_flux=boundary_integral(grid, g),
    )
    logger.info(f"DTN | EVAL | phi={record.phi:.10g} | primal={sol.primal_energy:.10g} | "
                f"flux={record.total_flux:.3e} | converged={sol.converged}")
    return record


def phi_via_min(grid: Grid, h, opts: Optional[SolverOptions] = None) -> float:
    """phi(h) as the minimum value of Phi_h (primal energy of the solver)."""
    return solve_relaxed_dirichlet(grid, h, opts).primal_energy


def cross_certify(grid: Grid, h, u, z) -> CertificateReport:
    """Certificate defects of (u, z) coming from different solves."""
    return certify_pair(grid, h, u, z)


@dataclass
class HomogeneityEntry:
    lam: float
    phi_scaled: float
    phi_expected: float
    deviation: float
    allowed: float
    cross_certificate: Dict[str, float]
    cross_allowed: Optional[float]
    same_selection: Optional[float]


def homogeneity_report(grid: Grid, h, lambdas: Sequence[float],
                       opts: Optional[SolverOptions] = None, *, workers: int = 1) -> Dict[str, Any]:
    """phi(lam*h) against lam*phi(h), and z(lam*h) as a certificate for u(h).

    ``allowed`` is gap_lam + lam*gap, the certified bound on the deviation.
    ``cross_allowed`` is gap + gap_lam/lam: pairing_defect + weighted_sign_defect
    of (u(h), z(lam*h)) cannot exceed it, since the box dual is homogeneous.
    ``same_selection`` is max|g(lam*h) - g(h)| (monitored only).
    """
    hv = boundary_values(grid, h)
    for lam in lambdas:
        require(np.isfinite(lam) and lam >= 0, f"lambdas must be nonnegative reals, got {lam!r}")
    base = solve_relaxed_dirichlet(grid, hv, opts)

    def run(lam: float) -> TvSolution:
        return solve_relaxed_dirichlet(grid, lam * hv, opts)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        solutions = list(pool.map(run, lambdas))

    entries = []
    for lam, sol in zip(lambdas, solutions):
        expected = lam * base.primal_energy
        cross = cross_certify(grid, hv, base.u, sol.z)
        if lam > 0:
            selection = float(np.abs(sol.z.boundary - base.z.boundary).max(initial=0.0))
            cross_allowed = max(base.gap, 0.0) + max(sol.gap, 0.0) / lam
        else:
            selection = cross_allowed = None
        entries.append(HomogeneityEntry(
            lam=float(lam),
            phi_scaled=sol.primal_energy,
            phi_expected=expected,
            deviation=abs(sol.primal_energy - expected),
            allowed=max(sol.gap, 0.0) + lam * max(base.gap, 0.0),
            cross_certificate=cross.to_dict(),
            cross_allowed=cross_allowed,
            same_selection=selection,
        ))
    converged = base.converged and all(s.converged for s in solutions)
    logger.info(f"DTN | HOMOGENEITY | lambdas={list(lambdas)} | "
                f"max_dev={max((e.deviation for e in entries), default=0.0):.3e} | converged={converged}")
    return {
        "phi": base.primal_energy,
        "gap": base.gap,
        "converged": converged,
        "entries": [e.__dict__ for e in entries],
    }


def evenness_check(grid: Grid, h, opts: Optional[SolverOptions] = None) -> Dict[str, float]:
    """phi(h) = phi(-h); deviation against the sum of both gaps."""
    hv = boundary_values(grid, h)
    plus = solve_relaxed_dirichlet(grid, hv, opts)
    minus = solve_relaxed_dirichlet(grid, -hv, opts)
    return {
        "phi_plus": plus.primal_energy,
        "phi_minus": minus.primal_energy,
        "deviation": abs(plus.primal_energy - minus.primal_energy),
        "allowed": max(plus.gap, 0.0) + max(minus.gap, 0.0),
    }


def smooth_truncation(r: np.ndarray, k: float) -> np.ndarray:
    """clamp(k*r, -1, 1) with a cubic blend: C^1, nondecreasing, p(0) = 0."""
    s = k * np.asarray(r, dtype=float)
    inner = 0.5 * (3.0 * s - s ** 3)
    return np.where(np.abs(s) <= 1.0, inner, np.sign(s))


def accretivity_pairing(grid: Grid, a: DtNRecord, b: DtNRecord,
                        slopes: Sequence[float] = TRUNCATION_SLOPES) -> Dict[str, Any]:
    """<g_a - g_b, p_k(h_a - h_b)> for each slope k; theory says >= 0."""
    diff_g = a.g.values - b.g.values
    diff_h = a.h.values - b.h.values
    values = {str(k): inner_boundary(grid, diff_g, smooth_truncation(diff_h, k)) for k in slopes}
    # each record's phi error is at most its gap; the pairing inherits both
    slack = max(a.solution.gap, 0.0) + max(b.solution.gap, 0.0)
    return {"values": values, "minimum": min(values.values()), "slack": slack}


def entropy_transport_ratio(grid: Grid, record: DtNRecord, eps: float = 1e-12) -> Optional[float]:
    """||h - mean(h)||_1 / phi(h); None when phi vanishes."""
    scale = grid.perimeter * max(float(np.abs(record.h.values).max(initial=0.0)), 1.0)
    if record.phi <= eps * scale:
        return None
    spread = boundary_norm(grid, record.h.values - boundary_mean(grid, record.h), 1)
    return spread / record.phi


@dataclass
class StabilityEntry:
    index: int
    distance_l1: float
    phi: float
    phi_deviation: float
    lipschitz_margin: float
    pairing_deviations: List[float] = field(default_factory=list)


def default_test_functions(grid: Grid) -> List[np.ndarray]:
    """1, x, y and sign(x) sampled at boundary segment midpoints."""
    mid = grid.seg_midpoint - (0.0 if grid.kind == "disk" else 0.5 * grid.size)
    return [np.ones(grid.num_segments), mid[:, 0], mid[:, 1], np.sign(mid[:, 0])]


def stability_probe(grid: Grid, h, perturbations: Sequence, opts: Optional[SolverOptions] = None,
                    *, tests: Optional[Sequence[np.ndarray]] = None) -> Dict[str, Any]:
    """phi and weak co-normal pairings along a sequence h_n -> h.

    The Lipschitz margin ||h_n - h||_1 + gap_n + gap - |phi_n - phi| is
    nonnegative for exact arithmetic on any certified pair of solves.
    """
    hv = boundary_values(grid, h)
    tests = list(tests) if tests is not None else default_test_functions(grid)
    base = evaluate(grid, hv, opts)
    entries = []
    for i, hn in enumerate(perturbations):
        hn = boundary_values(grid, hn, f"perturbations[{i}]")
        rec = evaluate(grid, hn, opts, warm=base.solution)
        dist = boundary_norm(grid, hn - hv, 1)
        dev = abs(rec.solution.primal_energy - base.solution.primal_energy)
        margin = dist + max(rec.solution.gap, 0.0) + max(base.solution.gap, 0.0) - dev
        pairings = [abs(inner_boundary(grid, rec.g.values - base.g.values, xi)) for xi in tests]
        entries.append(StabilityEntry(index=i, distance_l1=dist, phi=rec.solution.primal_energy,
                                      phi_deviation=dev, lipschitz_margin=margin,
                                      pairing_deviations=pairings))
    logger.info(f"DTN | STABILITY | n={len(entries)} | "
                f"min_margin={min((e.lipschitz_margin for e in entries), default=0.0):.3e}")
    return {"phi": base.solution.primal_energy, "gap": base.solution.gap,
            "entries": [e.__dict__ for e in entries]}
