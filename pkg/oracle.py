#!/usr/bin/env python3
"""
Exact desk-scale minimizers of the anisotropic Phi_h.

For the l1 edge norm, Phi_h(u) = integral over t of the cut cost of {u > t}.
Between consecutive boundary values the cut cost does not depend on t, so one
s-t min cut per gap gives every level set; the sets are intersected downward
to keep them nested and summed back into u.

Also holds the closed-form disk example with a one-parameter family of
minimizers of equal energy.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import maxflow
import numpy as np
from scipy import integrate

from errors import OracleSizeError, require
from grid import KIND_DISK, BoundaryData, BulkField, Grid, boundary_values, midpoint_angle
from tvmin import energy_phi_h_anisotropic

logger = logging.getLogger("lsgrad.oracle")

MAX_LATTICE = 64
EXHAUSTIVE_MAX_NODES = 16
EXHAUSTIVE_MAX_LEVELS = 8
EXHAUSTIVE_MAX_ASSIGNMENTS = 2 ** 24
_CHUNK = 1 << 16


def _level_set(grid: Grid, hv: np.ndarray, t: float) -> np.ndarray:
    """Minimal-cost superlevel set {u > t}; True marks the source side."""
    graph = maxflow.Graph[float]()
    nodes = graph.add_nodes(grid.num_nodes)
    for a, b, w in zip(grid.edge_tail, grid.edge_head, grid.edge_face):
        graph.add_edge(nodes[a], nodes[b], float(w), float(w))
    src = np.zeros(grid.num_nodes)
    snk = np.zeros(grid.num_nodes)
    above = hv > t
    np.add.at(src, grid.seg_owner[above], grid.seg_length[above])
    np.add.at(snk, grid.seg_owner[~above], grid.seg_length[~above])
    for i in range(grid.num_nodes):
        if src[i] or snk[i]:
            graph.add_tedge(nodes[i], float(src[i]), float(snk[i]))
    graph.maxflow()
    return np.array([graph.get_segment(nodes[i]) == 0 for i in range(grid.num_nodes)], dtype=bool)


def coarea_mincut_min_phi(grid: Grid, h, *, workers: int = 1) -> Tuple[float, BulkField]:
    """Exact (value, minimizer) of the anisotropic Phi_h by thresholding.

    Raises:
        OracleSizeError: lattice wider than MAX_LATTICE
    """
    if grid.n > MAX_LATTICE:
        raise OracleSizeError(f"coarea oracle is limited to n <= {MAX_LATTICE}, got n={grid.n}")
    hv = boundary_values(grid, h)
    levels = np.unique(hv)
    if levels.size == 1:
        u = np.full(grid.num_nodes, levels[0])
        return energy_phi_h_anisotropic(grid, hv, u), BulkField(u)

    thresholds = 0.5 * (levels[:-1] + levels[1:])
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        sets: List[np.ndarray] = list(pool.map(lambda t: _level_set(grid, hv, t), thresholds))

    for k in range(1, len(sets)):
        sets[k] = sets[k] & sets[k - 1]

    u = np.full(grid.num_nodes, levels[0])
    for jump, chi in zip(np.diff(levels), sets):
        u = u + jump * chi
    value = energy_phi_h_anisotropic(grid, hv, u)
    logger.info(f"ORACLE | COAREA | nodes={grid.num_nodes} | levels={levels.size} | value={value:.12g}")
    return value, BulkField(u)


def level_sets_nested(grid: Grid, u, levels) -> bool:
    """True when {u > t} shrinks as t runs through the given levels."""
    uv = u.values if isinstance(u, BulkField) else np.asarray(u, dtype=float)
    sets = [uv > t for t in np.sort(np.asarray(levels, dtype=float))]
    return all(not np.any(b & ~a) for a, b in zip(sets, sets[1:]))


def exhaustive_min_phi(grid: Grid, h) -> float:
    """Brute force over all assignments of node values from the boundary-value set.

    Raises:
        OracleSizeError: more than 16 nodes, 8 levels or 2**24 assignments
    """
    hv = boundary_values(grid, h)
    levels = np.unique(hv)
    m, k = grid.num_nodes, levels.size
    if m > EXHAUSTIVE_MAX_NODES:
        raise OracleSizeError(f"exhaustive oracle takes at most {EXHAUSTIVE_MAX_NODES} nodes, got {m}")
    if k > EXHAUSTIVE_MAX_LEVELS:
        raise OracleSizeError(f"exhaustive oracle takes at most {EXHAUSTIVE_MAX_LEVELS} levels, got {k}")
    total = k ** m
    if total > EXHAUSTIVE_MAX_ASSIGNMENTS:
        raise OracleSizeError(f"{total} assignments exceed the cap of {EXHAUSTIVE_MAX_ASSIGNMENTS}")

    powers = k ** np.arange(m, dtype=np.int64)
    best = np.inf
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        u = levels[(idx[:, None] // powers) % k]
        edge = np.abs(u[:, grid.edge_head] - u[:, grid.edge_tail]) @ grid.edge_face
        bnd = np.abs(u[:, grid.seg_owner] - hv) @ grid.seg_length
        best = min(best, float((edge + bnd).min()))
    logger.info(f"ORACLE | EXHAUSTIVE | nodes={m} | levels={k} | assignments={total} | value={best:.12g}")
    return best


# ---------------------------------------------------------------------------
# Disk example: h = cos(2 theta) + sign(cos(2 theta)) on the unit circle
# ---------------------------------------------------------------------------

_HALF_DIAG = np.sqrt(2.0) / 2.0


def disk_example_data(grid: Grid) -> BoundaryData:
    require(grid.kind == KIND_DISK, "disk example needs a disk grid")
    c = np.cos(2.0 * midpoint_angle(grid))
    return BoundaryData(c + np.sign(c))


def disk_example_family(grid: Grid, lam: float) -> BulkField:
    """u^lam: 2x^2 in the side lenses, lam in the centre square, -2y^2 in the caps."""
    require(grid.kind == KIND_DISK, "disk example needs a disk grid")
    require(-1.0 <= lam <= 1.0, f"lam must lie in [-1, 1], got {lam!r}")
    x = grid.centers[:, 0] / grid.size
    y = grid.centers[:, 1] / grid.size
    u = np.full(grid.num_nodes, float(lam))
    sides = (np.abs(x) > _HALF_DIAG) & (np.abs(y) < _HALF_DIAG)
    caps = (np.abs(x) < _HALF_DIAG) & (np.abs(y) > _HALF_DIAG)
    u[sides] = 2.0 * x[sides] ** 2
    u[caps] = -2.0 * y[caps] ** 2
    return BulkField(u)


def disk_example_energy() -> float:
    """Phi_h(u^lam) on the unit disk: 8*sqrt(2)/3 smooth part plus 4*sqrt(2) jumps."""
    return 20.0 * np.sqrt(2.0) / 3.0


def disk_example_energy_quadrature(lam: float = 0.0) -> float:
    """Same value by numerical integration; traces agree with h so only |Du| counts."""
    lens, _ = integrate.quad(lambda x: 4.0 * x * 2.0 * np.sqrt(1.0 - x * x), _HALF_DIAG, 1.0)
    side = 2.0 * _HALF_DIAG
    jumps, _ = integrate.quad(lambda s: 2.0 * abs(1.0 - lam) + 2.0 * abs(-1.0 - lam), 0.0, side)
    return 4.0 * lens + jumps
