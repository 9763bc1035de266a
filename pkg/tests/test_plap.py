#!/usr/bin/env python3
"""
p-Laplace Gate Test: regularized Robin problems and continuation p -> 1

Proves:
  A. PlapOptions validates p, epsilon and the line-search constants
  B. p = 2 reproduces the exact linear solution u = beta*x
  C. Constant data g = c give u = c/alpha without a Newton step
  D. Newton energies never increase and the residual drops
  E. Continuation schedules must be strictly decreasing inside (1, 2]
  F. continuation() and epsilon_sensitivity() report one entry per level

Deterministic, headless, offline (<60s).
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import InvalidArgument
from grid import build_square_grid
from plap import (PlapOptions, continuation, epsilon_sensitivity, plap_energy,
                  solve_robin_p)
from resolvent import solve_robin
from tvmin import SolverOptions


def _linear_problem(n=6, alpha=1.0, beta=0.5):
    """Robin data whose p = 2 solution is exactly beta*x at the cell centres."""
    grid = build_square_grid(n)
    x_owner = grid.centers[grid.seg_owner, 0]
    g = beta * (alpha * x_owner + grid.seg_normal[:, 0])
    return grid, g, beta * grid.centers[:, 0]


# ---------------------------------------------------------------------------
# Test A: options
# ---------------------------------------------------------------------------

def test_a_options():
    PlapOptions().validate()
    for bad in ({"p": 1.0}, {"p": 2.5}, {"epsilon": 0.0}, {"armijo": 0.7},
                {"backtrack": 1.0}, {"max_newton": 0}):
        with pytest.raises(InvalidArgument):
            PlapOptions(**bad).validate()
    with pytest.raises(InvalidArgument, match="unknown plap option"):
        PlapOptions.from_dict({"q": 1.5})
    opts = PlapOptions.from_dict({"p": 1.2, "epsilon": 1e-3})
    assert opts.resolved_epsilon(100.0) == 1e-3
    assert PlapOptions().resolved_epsilon(2.0) == pytest.approx(2e-6)
    assert PlapOptions.from_dict(opts.to_dict()) == opts


# ---------------------------------------------------------------------------
# Test B: exact linear solution
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [1.0, 2.0])
def test_b_p2_linear_solution(alpha):
    grid, g, exact = _linear_problem(alpha=alpha)
    res = solve_robin_p(grid, g, alpha, PlapOptions(p=2.0))
    assert res.converged
    np.testing.assert_allclose(res.u.values, exact, atol=1e-8)
    # flux through east / west faces is +-beta, zero through north / south
    np.testing.assert_allclose(res.flux.values, 0.5 * grid.seg_normal[:, 0], atol=1e-8)
    assert res.residual <= 1e-9


# ---------------------------------------------------------------------------
# Test C: constant data
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("p", [2.0, 1.5, 1.1])
def test_c_constant_data(p):
    grid = build_square_grid(5)
    g = np.full(grid.num_segments, 0.6)
    res = solve_robin_p(grid, g, 2.0, PlapOptions(p=p))
    assert res.converged
    assert res.iterations == 0
    np.testing.assert_allclose(res.u.values, 0.3)
    np.testing.assert_allclose(res.flux.values, 0.0, atol=1e-15)


# ---------------------------------------------------------------------------
# Test D: monotone energies
# ---------------------------------------------------------------------------

def test_d_energy_nonincreasing():
    grid = build_square_grid(8)
    rng = np.random.default_rng(4)
    g = rng.uniform(-1.5, 1.5, grid.num_segments)
    opts = PlapOptions(p=1.4, epsilon=1e-2, max_newton=60)
    res = solve_robin_p(grid, g, 1.0, opts)
    energies = np.asarray(res.energy_history)
    assert np.all(np.diff(energies) <= 0.0)
    assert res.residual < res.residual_history[0]
    assert plap_energy(grid, g, 1.0, res.u, 1.4, 1e-2) <= energies[0] + 1e-12
    assert res.to_report()["p"] == 1.4


def test_d_warm_start():
    grid, g, exact = _linear_problem()
    res = solve_robin_p(grid, g, 1.0, PlapOptions(p=2.0), warm=exact)
    assert res.converged
    assert res.iterations <= 2


# ---------------------------------------------------------------------------
# Test E: schedules
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("schedule", [[], [1.4, 1.8], [1.5, 1.5], [2.2, 1.5], [1.5, 1.0]])
def test_e_bad_schedule(schedule):
    grid, g, _ = _linear_problem(4)
    with pytest.raises(InvalidArgument):
        continuation(grid, g, 1.0, schedule, tv_solution=object())


# ---------------------------------------------------------------------------
# Test F: sweeps
# ---------------------------------------------------------------------------

def test_f_continuation_and_sensitivity():
    grid = build_square_grid(6)
    g = np.sign(grid.seg_midpoint[:, 0] - 0.5) * 0.8
    tv_opts = SolverOptions(tolerance=1e-6)
    reference = solve_robin(grid, g, 1.0, tv_opts)
    opts = PlapOptions(epsilon=1e-3, max_newton=80)
    report = continuation(grid, g, 1.0, [1.8, 1.5, 1.3], opts, tv_solution=reference)
    assert [e["p"] for e in report["entries"]] == [1.8, 1.5, 1.3]
    for e in report["entries"]:
        assert e["distance_l1"] >= 0.0
        assert e["iterations"] <= 80
    assert report["alpha"] == 1.0
    assert report["tv"]["alpha"] == 1.0

    sens = epsilon_sensitivity(grid, g, 1.0, 1.3, [1e-2, 1e-3], opts, tv_solution=reference)
    assert [e["epsilon"] for e in sens["entries"]] == [1e-2, 1e-3]
    assert len(sens["distance_changes"]) == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
