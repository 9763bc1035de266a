#!/usr/bin/env python3
"""
TV Minimizer Gate Test: relaxed Dirichlet problem and its certificate

Proves:
  A. SolverOptions validates its fields and rejects unknown keys
  B. Constant data returns the constant solution with zero energy and gap
  C. sign(x - 1/2) on the unit square: dual <= 2 <= primal, both close to 2
  D. The exact pair (sign field, constant field (1, 0)) has zero defects
  E. dirichlet_bounds brackets the minimum for the exact pair and for solver output
  F. Step sizes beyond the operator norm bound are refused
  G. save_solution writes u, z, g and a report with the certificate
  H. The anisotropic variant reports its mode and a valid bracket
  I. Default options reach the 1e-6 gap on rough 16x16 data
  J. div_residual is the max discrete divergence of the returned z
  K. Solutions from two seeds certify each other within the summed gaps

Deterministic, headless, offline (<60s).
"""

import os
import sys
import tempfile

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dtn import cross_certify
from errors import InvalidArgument
from event_bus import SOLVE_DONE, EventBus
from grid import DualField, build_square_grid, constant_dual_field, divergence, sup_norm
from tvmin import (MODE_ANISOTROPIC, SolverOptions, _solve_relaxed_dirichlet_anisotropic,
                   certify, certify_pair, dirichlet_bounds, energy_phi_h,
                   operator_norm_sq, save_solution, solve_relaxed_dirichlet)


def _sign_problem(n=8):
    grid = build_square_grid(n)
    h = np.sign(grid.seg_midpoint[:, 0] - 0.5)
    u = np.sign(grid.centers[:, 0] - 0.5)
    return grid, h, u


# ---------------------------------------------------------------------------
# Test A: options
# ---------------------------------------------------------------------------

def test_a_options():
    opts = SolverOptions.from_dict({"tolerance": 1e-4, "seed": 3})
    opts.validate()
    assert opts.tolerance == 1e-4 and opts.seed == 3
    assert opts.with_updates(max_iters=10).max_iters == 10
    assert SolverOptions.from_dict(opts.to_dict()) == opts
    with pytest.raises(InvalidArgument, match="unknown solver option"):
        SolverOptions.from_dict({"tolerence": 1e-4})
    with pytest.raises(InvalidArgument):
        SolverOptions(max_iters=0).validate()
    with pytest.raises(InvalidArgument):
        SolverOptions(tolerance=-1.0).validate()
    with pytest.raises(InvalidArgument, match="together"):
        SolverOptions(step_primal=0.1).validate()


# ---------------------------------------------------------------------------
# Test B: constants
# ---------------------------------------------------------------------------

def test_b_constant_data():
    grid = build_square_grid(6)
    h = np.full(grid.num_segments, 0.7)
    bus = EventBus()
    seen = []
    bus.subscribe(lambda kind, payload: seen.append((kind, payload["kind"])))
    sol = solve_relaxed_dirichlet(grid, h, bus=bus)
    assert sol.converged
    np.testing.assert_allclose(sol.u.values, 0.7)
    assert sol.primal_energy == pytest.approx(0.0, abs=1e-14)
    assert abs(sol.gap) < 1e-12
    assert seen == [(SOLVE_DONE, "dirichlet")]


# ---------------------------------------------------------------------------
# Test C: sign data
# ---------------------------------------------------------------------------

def test_c_sign_data_bracket():
    grid, h, _ = _sign_problem()
    sol = solve_relaxed_dirichlet(grid, h, SolverOptions(tolerance=1e-5))
    assert sol.dual_energy <= 2.0 + 1e-9
    assert sol.primal_energy >= 2.0 - 1e-9
    assert sol.primal_energy - 2.0 < 1e-3
    assert sol.gap == pytest.approx(sol.primal_energy - sol.dual_energy)
    assert sup_norm(grid, sol.z) <= 1.0 + 1e-12
    report = certify(grid, h, sol)
    assert report.z_sup <= 1.0 + 1e-12
    assert sol.to_report()["mode"] == "isotropic"


def test_c_same_seed_same_answer():
    grid, h, _ = _sign_problem(6)
    opts = SolverOptions(max_iters=500, seed=4)
    a = solve_relaxed_dirichlet(grid, h, opts)
    b = solve_relaxed_dirichlet(grid, h, opts)
    np.testing.assert_array_equal(a.u.values, b.u.values)
    assert a.gap == b.gap


# ---------------------------------------------------------------------------
# Test D: exact certificate
# ---------------------------------------------------------------------------

def test_d_exact_pair_certifies():
    grid, h, u = _sign_problem()
    z = constant_dual_field(grid, 1.0, 0.0)
    report = certify_pair(grid, h, u, z)
    assert report.z_sup == pytest.approx(1.0)
    assert report.div_residual < 1e-12
    assert report.pairing_defect < 1e-12
    assert report.sign_defect == 0.0
    assert report.passed(1e-10)
    assert energy_phi_h(grid, h, u) == pytest.approx(2.0)


def test_d_wrong_pair_fails():
    grid, h, u = _sign_problem()
    z = constant_dual_field(grid, 0.0, 1.0)
    report = certify_pair(grid, h, u, z)
    assert report.pairing_defect == pytest.approx(2.0)
    assert not report.passed(1e-6)


# ---------------------------------------------------------------------------
# Test E: bounds
# ---------------------------------------------------------------------------

def test_e_bounds():
    grid, h, u = _sign_problem()
    lower, upper = dirichlet_bounds(grid, h, u, constant_dual_field(grid, 1.0, 0.0))
    assert lower == pytest.approx(2.0)
    assert upper == pytest.approx(2.0)
    sol = solve_relaxed_dirichlet(grid, h, SolverOptions(max_iters=2000))
    lower, upper = dirichlet_bounds(grid, h, sol.u, sol.z)
    assert lower <= 2.0 + 1e-9 <= upper + 2e-9


# ---------------------------------------------------------------------------
# Test F: step sizes
# ---------------------------------------------------------------------------

def test_f_step_bound():
    grid, h, _ = _sign_problem(4)
    norm_sq = operator_norm_sq(grid)
    assert norm_sq > 0
    with pytest.raises(InvalidArgument, match="exceeds 1"):
        solve_relaxed_dirichlet(grid, h, SolverOptions(step_primal=10.0, step_dual=10.0))
    safe = 0.9 / np.sqrt(norm_sq)
    sol = solve_relaxed_dirichlet(grid, h, SolverOptions(step_primal=safe, step_dual=safe, max_iters=200))
    assert sol.iterations == 200 or sol.converged


# ---------------------------------------------------------------------------
# Test G: saved artifacts
# ---------------------------------------------------------------------------

def test_g_save_solution():
    grid, h, _ = _sign_problem(4)
    sol = solve_relaxed_dirichlet(grid, h, SolverOptions(max_iters=300))
    with tempfile.TemporaryDirectory(prefix="tv_g_") as tmp:
        report = save_solution(tmp, grid, h, sol, extra={"label": "sign"})
        for name in ("u.csv", "z.csv", "g.csv", "report.json"):
            assert os.path.exists(os.path.join(tmp, name)), name
        assert set(report["certificate"]) >= {"z_sup", "div_residual", "pairing_defect", "sign_defect"}
        assert report["label"] == "sign"
        assert report["grid"]["nodes"] == 16


# ---------------------------------------------------------------------------
# Test H: anisotropic variant
# ---------------------------------------------------------------------------

def test_h_anisotropic():
    grid, h, _ = _sign_problem(6)
    sol = _solve_relaxed_dirichlet_anisotropic(grid, h, SolverOptions(max_iters=3000))
    assert sol.mode == MODE_ANISOTROPIC
    assert sol.dual_energy <= 2.0 + 1e-9 <= sol.primal_energy + 2e-9
    assert np.abs(sol.z.edge).max() <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# Test I: default options on rough data
# ---------------------------------------------------------------------------

def test_i_default_options_converge_on_random_data():
    grid = build_square_grid(16)
    h = np.random.default_rng(11).uniform(-1.0, 1.0, grid.num_segments)
    sol = solve_relaxed_dirichlet(grid, h)
    assert sol.converged, sol.to_report()
    assert sol.iterations <= SolverOptions().max_iters
    assert sol.gap <= 1e-6 * sol.primal_energy
    assert sol.div_residual <= 1e-6 * sol.scale
    assert sol.dual_energy <= sol.primal_energy
    assert sup_norm(grid, sol.z) <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# Test J: divergence residual is the discrete divergence
# ---------------------------------------------------------------------------

def test_j_div_residual_is_max_divergence():
    n = 8
    grid = build_square_grid(n)
    z = constant_dual_field(grid, 1.0, 0.0)
    z = DualField(edge=z.edge, boundary=np.zeros(grid.num_segments))
    # left and right columns carry net flux +-spacing over area spacing**2
    report = certify_pair(grid, np.zeros(grid.num_segments), np.zeros(grid.num_nodes), z)
    assert report.div_residual == pytest.approx(float(n))
    assert report.div_residual == pytest.approx(np.abs(divergence(grid, z).values).max())


def test_j_solver_div_residual_matches_certificate():
    grid = build_square_grid(12)
    h = np.random.default_rng(3).uniform(-1.0, 1.0, grid.num_segments)
    sol = solve_relaxed_dirichlet(grid, h, SolverOptions(max_iters=400))
    measured = float(np.abs(divergence(grid, sol.z).values).max())
    assert sol.div_residual == pytest.approx(measured, rel=1e-9, abs=1e-12)
    assert certify(grid, h, sol).div_residual == pytest.approx(measured, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# Test K: certificates from different seeds are interchangeable
# ---------------------------------------------------------------------------

def test_k_cross_certify_two_seeds():
    grid = build_square_grid(8)
    h = np.random.default_rng(21).uniform(-1.0, 1.0, grid.num_segments)
    a = solve_relaxed_dirichlet(grid, h, SolverOptions(seed=1))
    b = solve_relaxed_dirichlet(grid, h, SolverOptions(seed=2))
    assert a.converged and b.converged
    allowed = a.gap + b.gap + 1e-10 * a.scale
    for u, z in ((a.u, b.z), (b.u, a.z)):
        report = cross_certify(grid, h, u, z)
        assert report.z_sup <= 1.0 + 1e-12
        # both defects are parts of Phi_h(u) - dual(z) <= gap_a + gap_b
        assert report.pairing_defect + report.weighted_sign_defect <= allowed, report
    assert abs(a.primal_energy - b.primal_energy) <= max(a.gap, b.gap) + 1e-12


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
