#!/usr/bin/env python3
"""
Grid Gate Test: cell grids and the G / D / T / N operators

Proves:
  A. Square grids have the expected node, edge and segment counts
  B. Staircase disk perimeter equals its reference 8r for every n
  C. Summation by parts holds to rounding for random u and z
  D. Constant vector fields are divergence-free; gradient vanishes on the boundary
  E. Discrete total variation of x is (n-1)/n on the unit square and near pi on the disk
  F. Boundary norms, means and integrals use the segment weights
  G. JSON layout survives to_dict / from_dict; malformed layouts are rejected
  H. Invalid sizes, kinds and non-finite fields raise InvalidArgument; numpy integer
     sizes and extents are accepted

Deterministic, headless, offline (<5s).
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import InvalidArgument
from grid import (BulkField, DualField, Grid, boundary_integral, boundary_mean,
                  boundary_norm, build_disk_grid, build_grid, build_square_grid,
                  constant_dual_field, divergence, gradient, midpoint_angle,
                  summation_by_parts_residual, sup_norm, trace, tv,
                  tv_anisotropic, validate_grid_dict)


# ---------------------------------------------------------------------------
# Test A: counts
# ---------------------------------------------------------------------------

def test_a_square_counts():
    grid = build_square_grid(4, 2.0)
    assert grid.num_nodes == 16
    assert grid.num_edges == 2 * 4 * 3
    assert grid.num_segments == 16
    assert grid.spacing == pytest.approx(0.5)
    assert grid.perimeter == pytest.approx(8.0)
    assert grid.total_area == pytest.approx(4.0)
    assert grid.reference_perimeter == pytest.approx(8.0)
    # segments are ordered by owner
    assert np.all(np.diff(grid.seg_owner) >= 0)
    # the corner cell owns two segments
    assert grid.node_segments(0).size == 2


# ---------------------------------------------------------------------------
# Test B: disk staircase
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [8, 13, 32])
def test_b_disk_perimeter(n):
    grid = build_disk_grid(n, 1.5)
    assert grid.perimeter == pytest.approx(8.0 * 1.5, rel=1e-12)
    assert grid.reference_perimeter == pytest.approx(12.0)
    assert np.all(np.hypot(grid.centers[:, 0], grid.centers[:, 1]) < 1.5)
    assert grid.total_area < 9.0


# ---------------------------------------------------------------------------
# Test C: summation by parts
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind,n", [("square", 7), ("disk", 16)])
def test_c_summation_by_parts(kind, n):
    grid = build_grid(kind, n)
    rng = np.random.default_rng(5)
    u = rng.standard_normal(grid.num_nodes)
    z = DualField(edge=rng.standard_normal(grid.num_edges),
                  boundary=rng.standard_normal(grid.num_segments))
    assert summation_by_parts_residual(grid, u, z) < 1e-10


# ---------------------------------------------------------------------------
# Test D: constant fields and the gradient
# ---------------------------------------------------------------------------

def test_d_constant_field_divergence_free():
    grid = build_disk_grid(20)
    z = constant_dual_field(grid, 0.6, -0.8)
    assert np.abs(divergence(grid, z).values).max() < 1e-12
    assert sup_norm(grid, z) == pytest.approx(1.0)


def test_d_gradient_boundary_part_is_zero():
    grid = build_square_grid(5)
    u = grid.centers[:, 0] ** 2
    g = gradient(grid, u)
    assert g.boundary.shape == (grid.num_segments,)
    assert not np.any(g.boundary)
    np.testing.assert_allclose(trace(grid, u).values, u[grid.seg_owner])


# ---------------------------------------------------------------------------
# Test E: total variation
# ---------------------------------------------------------------------------

def test_e_tv_of_linear_function():
    n = 6
    grid = build_square_grid(n)
    x = grid.centers[:, 0]
    assert tv(grid, x) == pytest.approx((n - 1) / n)
    assert tv_anisotropic(grid, x) == pytest.approx((n - 1) / n)
    # the isotropic value does not exceed the l1 one
    y = grid.centers[:, 1]
    assert tv(grid, x + y) <= tv_anisotropic(grid, x + y) + 1e-12
    assert tv(grid, np.full(grid.num_nodes, 3.0)) == 0.0

    # |Du| = 1 for u = x, so tv approaches the disk area
    disk = build_disk_grid(128)
    assert abs(tv(disk, disk.centers[:, 0]) - np.pi) / np.pi < 0.03


# ---------------------------------------------------------------------------
# Test F: boundary quantities
# ---------------------------------------------------------------------------

def test_f_boundary_norms():
    grid = build_square_grid(4)
    ones = np.ones(grid.num_segments)
    assert boundary_norm(grid, ones, 1) == pytest.approx(4.0)
    assert boundary_norm(grid, ones, 2) == pytest.approx(2.0)
    assert boundary_norm(grid, -2.0 * ones, "inf") == pytest.approx(2.0)
    assert boundary_integral(grid, ones) == pytest.approx(4.0)
    assert boundary_mean(grid, 0.3 * ones) == 0.3
    with pytest.raises(InvalidArgument):
        boundary_norm(grid, ones, 0.5)


def test_f_midpoint_angle_range():
    grid = build_disk_grid(16)
    theta = midpoint_angle(grid)
    assert theta.shape == (grid.num_segments,)
    assert np.all((theta >= -np.pi) & (theta <= np.pi))


# ---------------------------------------------------------------------------
# Test G: JSON layout
# ---------------------------------------------------------------------------

def test_g_layout_roundtrip():
    grid = build_disk_grid(10, 2.0)
    data = grid.to_dict()
    assert validate_grid_dict(data) == []
    back = Grid.from_dict(data)
    assert back.kind == "disk" and back.n == 10
    np.testing.assert_array_equal(back.seg_owner, grid.seg_owner)
    np.testing.assert_array_equal(back.seg_normal, grid.seg_normal)
    assert back.perimeter == grid.perimeter


def test_g_malformed_layout():
    data = build_square_grid(3).to_dict()
    data["edges"]["tail"] = data["edges"]["tail"][:-1]
    errors = validate_grid_dict(data)
    assert any("inconsistent lengths" in e for e in errors)
    data = build_square_grid(3).to_dict()
    data["boundary_segments"]["owner"][0] = 99
    assert any("outside" in e for e in validate_grid_dict(data))
    del data["kind"]
    assert "missing required key: kind" in validate_grid_dict(data)
    with pytest.raises(InvalidArgument):
        Grid.from_dict(data)


# ---------------------------------------------------------------------------
# Test H: invalid input
# ---------------------------------------------------------------------------

def test_h_invalid_input():
    with pytest.raises(InvalidArgument):
        build_grid("hexagon", 8)
    with pytest.raises(InvalidArgument):
        build_square_grid(1)
    with pytest.raises(InvalidArgument):
        build_disk_grid(7)
    with pytest.raises(InvalidArgument):
        build_square_grid(4, -1.0)
    with pytest.raises(InvalidArgument):
        build_square_grid(True)
    with pytest.raises(InvalidArgument):
        BulkField(np.array([0.0, np.nan]))
    grid = build_square_grid(3)
    with pytest.raises(InvalidArgument):
        tv(grid, np.zeros(4))


def test_h_numpy_sizes_accepted():
    grid = build_square_grid(np.int64(16), np.float64(2.0))
    assert grid.n == 16 and isinstance(grid.n, int)
    assert grid.spacing == pytest.approx(0.125)
    disk = build_disk_grid(np.int32(16), np.int64(2))
    assert disk.perimeter == pytest.approx(16.0)
    assert build_grid("square", np.int64(8), np.int64(3)).total_area == pytest.approx(9.0)
    with pytest.raises(InvalidArgument):
        build_square_grid(np.float64(8.0))
    with pytest.raises(InvalidArgument):
        build_square_grid(4, True)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
