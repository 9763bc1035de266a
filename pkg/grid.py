#!/usr/bin/env python3
"""
Cell-centred finite-volume grids and the discrete G / D / T / N operators.

Nodes are the active cells of an n x n lattice. Interior edges join
4-neighbours in the +x or +y direction. Boundary segments are the exposed
faces of active cells, ordered by owner cell and then by direction E, N, W, S.

A DualField carries one flux per interior edge and one outward flux per
boundary segment. The boundary part is the co-normal trace [z, nu], which
makes the summation-by-parts identity

    <u, D z>_Omega + <G u, z>_Omega = <T u, N z>_dOmega

hold exactly in floating point up to rounding.
"""

import logging
import numbers
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, Iterable, Union

import numpy as np

from errors import InvalidArgument, require

logger = logging.getLogger("lsgrad.grid")

KIND_SQUARE = "square"
KIND_DISK = "disk"
GRID_KINDS = (KIND_SQUARE, KIND_DISK)

# Face directions of a cell, in segment order
_DIRECTIONS = np.array([(1, 0), (0, 1), (-1, 0), (0, -1)], dtype=np.int64)

GRID_SCHEMA_VERSION = 1


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _checked_vector(values, label: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise InvalidArgument(f"{label}: expected a 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{label}: entries must be finite (NaN/inf found)")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Field types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BulkField:
    """Scalar values per node (cell)."""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _checked_vector(self.values, "BulkField"))

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Scalar values per boundary segment; weights are the grid's s_b."""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _checked_vector(self.values, "BoundaryData"))

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class DualField:
    """Fluxes on interior edges plus outward fluxes on boundary segments."""
    edge: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edge", _checked_vector(self.edge, "DualField.edge"))
        object.__setattr__(self, "boundary", _checked_vector(self.boundary, "DualField.boundary"))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.edge, self.boundary])


FieldLike = Union[BulkField, BoundaryData, np.ndarray, Iterable[float]]


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable 2-D discretization of Omega."""
    kind: str
    n: int
    size: float
    spacing: float
    centers: np.ndarray
    areas: np.ndarray
    lattice: np.ndarray
    edge_tail: np.ndarray
    edge_head: np.ndarray
    edge_axis: np.ndarray
    edge_face: np.ndarray
    edge_length: np.ndarray
    seg_owner: np.ndarray
    seg_length: np.ndarray
    seg_normal: np.ndarray
    seg_midpoint: np.ndarray
    reference_perimeter: float

    @property
    def num_nodes(self) -> int:
        return int(self.areas.size)

    @property
    def num_edges(self) -> int:
        return int(self.edge_tail.size)

    @property
    def num_segments(self) -> int:
        return int(self.seg_owner.size)

    @cached_property
    def perimeter(self) -> float:
        return float(np.sum(self.seg_length))

    @cached_property
    def total_area(self) -> float:
        return float(np.sum(self.areas))

    @cached_property
    def edge_weight(self) -> np.ndarray:
        """Transversal weight face * length of each interior edge."""
        return _readonly(self.edge_face * self.edge_length)

    @cached_property
    def east_edge(self) -> np.ndarray:
        return self._owned_edge(0)

    @cached_property
    def north_edge(self) -> np.ndarray:
        return self._owned_edge(1)

    def _owned_edge(self, axis: int) -> np.ndarray:
        out = np.full(self.num_nodes, -1, dtype=np.int64)
        sel = np.nonzero(self.edge_axis == axis)[0]
        out[self.edge_tail[sel]] = sel
        out.setflags(write=False)
        return out

    def node_segments(self, node: int) -> np.ndarray:
        """Boundary segment indices owned by a node."""
        return np.nonzero(self.seg_owner == node)[0]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return _readonly(np.unique(self.seg_owner), dtype=np.int64)

    def summary(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "n": self.n,
            "size": self.size,
            "spacing": self.spacing,
            "nodes": self.num_nodes,
            "edges": self.num_edges,
            "segments": self.num_segments,
            "perimeter": self.perimeter,
            "reference_perimeter": self.reference_perimeter,
            "area": self.total_area,
        }

    # -- JSON layout -------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": GRID_SCHEMA_VERSION,
            "kind": self.kind,
            "n": self.n,
            "size": self.size,
            "spacing": self.spacing,
            "perimeter": self.perimeter,
            "reference_perimeter": self.reference_perimeter,
            "nodes": {
                "centers": self.centers.tolist(),
                "areas": self.areas.tolist(),
                "lattice": self.lattice.tolist(),
            },
            "edges": {
                "tail": self.edge_tail.tolist(),
                "head": self.edge_head.tolist(),
                "axis": self.edge_axis.tolist(),
                "face_length": self.edge_face.tolist(),
                "length": self.edge_length.tolist(),
            },
            "boundary_segments": {
                "owner": self.seg_owner.tolist(),
                "length": self.seg_length.tolist(),
                "normal": self.seg_normal.tolist(),
                "midpoint": self.seg_midpoint.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Grid":
        errors = validate_grid_dict(data)
        if errors:
            raise InvalidArgument("invalid grid layout: " + "; ".join(errors))
        nodes = data["nodes"]
        edges = data["edges"]
        segs = data["boundary_segments"]
        return cls(
            kind=data["kind"],
            n=int(data["n"]),
            size=float(data["size"]),
            spacing=float(data["spacing"]),
            centers=_readonly(np.reshape(nodes["centers"], (-1, 2))),
            areas=_readonly(nodes["areas"]),
            lattice=_readonly(np.reshape(nodes["lattice"], (-1, 2)), dtype=np.int64),
            edge_tail=_readonly(edges["tail"], dtype=np.int64),
            edge_head=_readonly(edges["head"], dtype=np.int64),
            edge_axis=_readonly(edges["axis"], dtype=np.int64),
            edge_face=_readonly(edges["face_length"]),
            edge_length=_readonly(edges["length"]),
            seg_owner=_readonly(segs["owner"], dtype=np.int64),
            seg_length=_readonly(segs["length"]),
            seg_normal=_readonly(np.reshape(segs["normal"], (-1, 2))),
            seg_midpoint=_readonly(np.reshape(segs["midpoint"], (-1, 2))),
            reference_perimeter=float(data["reference_perimeter"]),
        )


def validate_grid_dict(data: Dict[str, Any]) -> list:
    """Validate a grid JSON dict. Returns a list of error strings."""
    errors = []
    if not isinstance(data, dict):
        return ["grid must be a JSON object"]
    for key in ("schema_version", "kind", "n", "size", "spacing",
                "reference_perimeter", "nodes", "edges", "boundary_segments"):
        if key not in data:
            errors.append(f"missing required key: {key}")
    if errors:
        return errors
    if data["schema_version"] != GRID_SCHEMA_VERSION:
        errors.append(f"unsupported schema_version: {data['schema_version']}")
    if data["kind"] not in GRID_KINDS:
        errors.append(f"kind must be one of {GRID_KINDS}")
    sections = {
        "nodes": ("centers", "areas", "lattice"),
        "edges": ("tail", "head", "axis", "face_length", "length"),
        "boundary_segments": ("owner", "length", "normal", "midpoint"),
    }
    for section, keys in sections.items():
        block = data[section]
        if not isinstance(block, dict):
            errors.append(f"{section} must be an object")
            continue
        lengths = set()
        for key in keys:
            if key not in block:
                errors.append(f"missing required key: {section}.{key}")
            elif not isinstance(block[key], list):
                errors.append(f"{section}.{key} must be a list")
            else:
                lengths.add(len(block[key]))
        if len(lengths) > 1:
            errors.append(f"{section}: inconsistent lengths {sorted(lengths)}")
    if errors:
        return errors
    m = len(data["nodes"]["areas"])
    for section, key in (("edges", "tail"), ("edges", "head"), ("boundary_segments", "owner")):
        idx = data[section][key]
        if idx and (min(idx) < 0 or max(idx) >= m):
            errors.append(f"{section}.{key} references a node outside 0..{m - 1}")
    return errors


def _assemble(kind: str, n: int, size: float, origin: float, spacing: float,
              mask: np.ndarray, reference_perimeter: float) -> Grid:
    rows, cols = np.nonzero(mask)
    m = rows.size
    index = np.full((n, n), -1, dtype=np.int64)
    index[rows, cols] = np.arange(m)
    centers = np.column_stack([origin + (cols + 0.5) * spacing,
                               origin + (rows + 0.5) * spacing])

    def neighbour(di: int, dj: int):
        ni, nj = cols + di, rows + dj
        inside = (ni >= 0) & (ni < n) & (nj >= 0) & (nj < n)
        nb = np.full(m, -1, dtype=np.int64)
        nb[inside] = index[nj[inside], ni[inside]]
        return nb

    tails, heads, axes = [], [], []
    for axis, (di, dj) in enumerate(_DIRECTIONS[:2]):
        nb = neighbour(di, dj)
        sel = np.nonzero(nb >= 0)[0]
        tails.append(sel)
        heads.append(nb[sel])
        axes.append(np.full(sel.size, axis, dtype=np.int64))
    tail = np.concatenate(tails)
    head = np.concatenate(heads)
    axis = np.concatenate(axes)
    order = np.lexsort((axis, tail))
    tail, head, axis = tail[order], head[order], axis[order]

    owners, dirs = [], []
    for d, (di, dj) in enumerate(_DIRECTIONS):
        nb = neighbour(di, dj)
        sel = np.nonzero(nb < 0)[0]
        owners.append(sel)
        dirs.append(np.full(sel.size, d, dtype=np.int64))
    owner = np.concatenate(owners)
    direction = np.concatenate(dirs)
    order = np.lexsort((direction, owner))
    owner, direction = owner[order], direction[order]
    normal = _DIRECTIONS[direction].astype(float)

    grid = Grid(
        kind=kind,
        n=n,
        size=float(size),
        spacing=float(spacing),
        centers=_readonly(centers),
        areas=_readonly(np.full(m, spacing * spacing)),
        lattice=_readonly(np.column_stack([cols, rows]), dtype=np.int64),
        edge_tail=_readonly(tail, dtype=np.int64),
        edge_head=_readonly(head, dtype=np.int64),
        edge_axis=_readonly(axis, dtype=np.int64),
        edge_face=_readonly(np.full(tail.size, spacing)),
        edge_length=_readonly(np.full(tail.size, spacing)),
        seg_owner=_readonly(owner, dtype=np.int64),
        seg_length=_readonly(np.full(owner.size, spacing)),
        seg_normal=_readonly(normal),
        seg_midpoint=_readonly(centers[owner] + 0.5 * spacing * normal),
        reference_perimeter=float(reference_perimeter),
    )
    logger.info(f"GRID | BUILD | kind={kind} | n={n} | nodes={grid.num_nodes} | "
                f"edges={grid.num_edges} | segments={grid.num_segments} | "
                f"perimeter={grid.perimeter:.6g}")
    return grid


def _check_size(n, minimum: int, extent, label: str) -> None:
    if isinstance(n, bool) or not isinstance(n, numbers.Integral):
        raise InvalidArgument(f"n must be an integer, got {n!r}")
    if n < minimum:
        raise InvalidArgument(f"n must be >= {minimum}, got {n}")
    if isinstance(extent, bool) or not (isinstance(extent, numbers.Real) and np.isfinite(extent) and extent > 0):
        raise InvalidArgument(f"{label} must be a positive real, got {extent!r}")


def build_square_grid(n: int, side: float = 1.0) -> Grid:
    """Uniform n x n cell grid over (0, side)^2."""
    _check_size(n, 2, side, "side")
    n = int(n)
    spacing = float(side) / n
    mask = np.ones((n, n), dtype=bool)
    return _assemble(KIND_SQUARE, n, side, 0.0, spacing, mask, 4.0 * float(side))


def build_disk_grid(n: int, radius: float = 1.0) -> Grid:
    """Staircase disk: cells of the n x n lattice on [-r, r]^2 whose centre
    lies strictly inside the circle.

    The active set is orthogonally convex, so its exposed-face perimeter is
    exactly 8r whatever n is; that value is the recorded reference.
    """
    _check_size(n, 8, radius, "radius")
    n = int(n)
    r = float(radius)
    spacing = 2.0 * r / n
    c = -r + (np.arange(n) + 0.5) * spacing
    xx, yy = np.meshgrid(c, c)
    mask = xx * xx + yy * yy < r * r
    return _assemble(KIND_DISK, n, r, -r, spacing, mask, 8.0 * r)


def build_grid(kind: str, n: int, size: float = 1.0) -> Grid:
    if kind == KIND_SQUARE:
        return build_square_grid(n, size)
    if kind == KIND_DISK:
        return build_disk_grid(n, size)
    raise InvalidArgument(f"unknown grid kind {kind!r}; valid: {GRID_KINDS}")


# ---------------------------------------------------------------------------
# Shape helpers
# ---------------------------------------------------------------------------

def node_values(grid: Grid, u: FieldLike, label: str = "u") -> np.ndarray:
    arr = u.values if isinstance(u, BulkField) else np.asarray(u, dtype=float)
    if arr.shape != (grid.num_nodes,):
        raise InvalidArgument(f"{label}: expected {grid.num_nodes} node values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{label}: entries must be finite")
    return arr


def boundary_values(grid: Grid, b: FieldLike, label: str = "h") -> np.ndarray:
    arr = b.values if isinstance(b, BoundaryData) else np.asarray(b, dtype=float)
    if arr.shape != (grid.num_segments,):
        raise InvalidArgument(f"{label}: expected {grid.num_segments} boundary values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{label}: entries must be finite")
    return arr


def _check_dual(grid: Grid, z: DualField) -> None:
    if not isinstance(z, DualField):
        raise InvalidArgument(f"expected a DualField, got {type(z).__name__}")
    if z.edge.shape != (grid.num_edges,) or z.boundary.shape != (grid.num_segments,):
        raise InvalidArgument(
            f"DualField shape ({z.edge.size}, {z.boundary.size}) does not match "
            f"grid ({grid.num_edges}, {grid.num_segments})")


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def gradient(grid: Grid, u: FieldLike) -> DualField:
    """Edge difference quotients; zero on boundary segments."""
    v = node_values(grid, u)
    diff = (v[grid.edge_head] - v[grid.edge_tail]) / grid.edge_length
    return DualField(edge=diff, boundary=np.zeros(grid.num_segments))


def divergence(grid: Grid, z: DualField) -> BulkField:
    """Net outward flux per unit area, boundary fluxes included."""
    _check_dual(grid, z)
    m = grid.num_nodes
    flux = z.edge * grid.edge_face
    net = (np.bincount(grid.edge_tail, flux, minlength=m)
           - np.bincount(grid.edge_head, flux, minlength=m)
           + np.bincount(grid.seg_owner, grid.seg_length * z.boundary, minlength=m))
    return BulkField(net / grid.areas)


def trace(grid: Grid, u: FieldLike) -> BoundaryData:
    v = node_values(grid, u)
    return BoundaryData(v[grid.seg_owner])


def conormal(grid: Grid, z: DualField) -> BoundaryData:
    """Discrete [z, nu]: the outward flux carried on each boundary segment."""
    _check_dual(grid, z)
    return BoundaryData(z.boundary)


def constant_dual_field(grid: Grid, c1: float, c2: float) -> DualField:
    """Restriction of the constant vector field (c1, c2)."""
    c = np.array([c1, c2], dtype=float)
    return DualField(edge=c[grid.edge_axis], boundary=grid.seg_normal @ c)


def inner_bulk(grid: Grid, u: FieldLike, v: FieldLike) -> float:
    return float(np.sum(grid.areas * node_values(grid, u) * node_values(grid, v, "v")))


def inner_dual(grid: Grid, a: DualField, b: DualField) -> float:
    _check_dual(grid, a)
    _check_dual(grid, b)
    return float(np.sum(grid.edge_weight * a.edge * b.edge))


def inner_boundary(grid: Grid, a: FieldLike, b: FieldLike) -> float:
    return float(np.sum(grid.seg_length * boundary_values(grid, a, "a") * boundary_values(grid, b, "b")))


def summation_by_parts_residual(grid: Grid, u: FieldLike, z: DualField) -> float:
    """|<u,Dz> + <Gu,z> - <Tu,Nz>|."""
    lhs = inner_bulk(grid, u, divergence(grid, z)) + inner_dual(grid, gradient(grid, u), z)
    rhs = inner_boundary(grid, trace(grid, u), conormal(grid, z))
    return abs(lhs - rhs)


def location_norms(grid: Grid, edge_values: np.ndarray) -> np.ndarray:
    """Euclidean norm per pairing location (a cell with its east and north edges)."""
    sq = np.bincount(grid.edge_tail, edge_values * edge_values, minlength=grid.num_nodes)
    return np.sqrt(sq)


def sup_norm(grid: Grid, z: DualField) -> float:
    _check_dual(grid, z)
    interior = location_norms(grid, z.edge)
    parts = [interior.max(initial=0.0), np.abs(z.boundary).max(initial=0.0)]
    return float(max(parts))


def tv(grid: Grid, u: FieldLike) -> float:
    """Isotropic discrete total variation."""
    v = node_values(grid, u)
    weighted = grid.edge_face * (v[grid.edge_head] - v[grid.edge_tail])
    return float(np.sum(location_norms(grid, weighted)))


def tv_anisotropic(grid: Grid, u: FieldLike) -> float:
    """l1 edge-norm total variation, the functional the exact oracle minimizes."""
    v = node_values(grid, u)
    return float(np.sum(grid.edge_face * np.abs(v[grid.edge_head] - v[grid.edge_tail])))


def boundary_integral(grid: Grid, b: FieldLike) -> float:
    return float(np.sum(grid.seg_length * boundary_values(grid, b, "b")))


def boundary_mean(grid: Grid, b: FieldLike) -> float:
    vals = boundary_values(grid, b, "b")
    if np.all(vals == vals[0]):
        return float(vals[0])
    return float(np.sum(grid.seg_length * vals) / grid.perimeter)


def boundary_norm(grid: Grid, b: FieldLike, q: Union[float, str]) -> float:
    """Weighted L^q(dOmega) norm; q may be 1, 2, any p >= 1 or 'inf'."""
    vals = np.abs(boundary_values(grid, b, "b"))
    if q in ("inf", np.inf, float("inf")):
        return float(vals.max(initial=0.0))
    q = float(q)
    require(q >= 1.0, f"q must be >= 1, got {q}")
    return float(np.sum(grid.seg_length * vals ** q) ** (1.0 / q))


def midpoint_angle(grid: Grid) -> np.ndarray:
    """Polar angle of each boundary segment midpoint about the domain centre."""
    centre = 0.0 if grid.kind == KIND_DISK else 0.5 * grid.size
    mid = grid.seg_midpoint - centre
    return np.arctan2(mid[:, 1], mid[:, 0])
