"""Radial grids on a ball in R^N, piecewise-linear fields and their quadrature.

A field is identified with its piecewise-linear interpolant in r.  Linear
functionals use exact hat-function weights against the density
``|S^{N-1}| r^{N-1}``; nonlinear integrands are evaluated at per-cell
Gauss-Legendre points of the interpolant, so that convex integrands are not
overestimated on coarse cells.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from math import comb
from pathlib import Path

import numpy as np

from .errors import GridMismatchError, ParameterError

GAUSS_ORDER = 4
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GAUSS_ORDER)
_GL_THETA = 0.5 * (_GL_X + 1.0)


def sphere_area(dim: int) -> float:
    """Surface area of the unit (dim-1)-sphere."""
    return 2.0 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def ball_volume(dim: int, radius: float) -> float:
    return sphere_area(dim) * radius**dim / dim


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _hat_weights(nodes: np.ndarray, dim: int) -> np.ndarray:
    """Exact integrals of the hat functions against omega * r^(dim-1).

    The binomial expansion around the left end of each cell keeps every
    term positive, so there is no cancellation on tiny cells far from 0.
    """
    a = nodes[:-1]
    h = np.diff(nodes)
    left = np.zeros_like(h)
    right = np.zeros_like(h)
    m = dim - 1
    for k in range(m + 1):
        c = comb(m, k) * a ** (m - k) * h ** (k + 1)
        left += c / ((k + 1) * (k + 2))
        right += c / (k + 2)
    w = np.zeros_like(nodes)
    w[:-1] += left
    w[1:] += right
    return sphere_area(dim) * w


@dataclass(frozen=True, eq=False)
class RadialGrid:
    dim: int
    radius: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size

    @cached_property
    def widths(self) -> np.ndarray:
        return _readonly(np.diff(self.nodes))

    @cached_property
    def shell_volumes(self) -> np.ndarray:
        """Volume of each annular cell, the exact measure of a P1 gradient term."""
        a, b = self.nodes[:-1], self.nodes[1:]
        # b^N - a^N = h * sum_k a^k b^(N-1-k), no cancellation
        s = sum(a**k * b ** (self.dim - 1 - k) for k in range(self.dim))
        return _readonly(sphere_area(self.dim) * self.widths * s / self.dim)

    @cached_property
    def gauss_points(self) -> np.ndarray:
        a = self.nodes[:-1, None]
        return _readonly(a + self.widths[:, None] * _GL_THETA[None, :])

    @cached_property
    def gauss_weights(self) -> np.ndarray:
        x = self.gauss_points
        w = 0.5 * self.widths[:, None] * _GL_W[None, :] * x ** (self.dim - 1)
        return _readonly(sphere_area(self.dim) * w)

    def at_gauss(self, values: np.ndarray) -> np.ndarray:
        """Piecewise-linear interpolant evaluated at the Gauss points, shape (cells, order)."""
        return (values[:-1, None] * (1.0 - _GL_THETA)[None, :]
                + values[1:, None] * _GL_THETA[None, :])

    def from_gauss(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`at_gauss`: scatter per-point coefficients onto nodes."""
        out = np.zeros(self.size)
        out[:-1] += g @ (1.0 - _GL_THETA)
        out[1:] += g @ _GL_THETA
        return out

    def slopes(self, values: np.ndarray) -> np.ndarray:
        return np.diff(values) / self.widths

    def matches(self, other: "RadialGrid") -> bool:
        return self is other or (
            self.dim == other.dim
            and self.size == other.size
            and np.array_equal(self.nodes, other.nodes)
        )

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "radius": self.radius,
                           "nodes": [float(x) for x in self.nodes]})

    @classmethod
    def from_json(cls, text: str) -> "RadialGrid":
        d = json.loads(text)
        return grid_from_nodes(int(d["dim"]), np.asarray(d["nodes"], dtype=float))


@dataclass(frozen=True, eq=False)
class Field:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.size,):
            raise ParameterError(
                f"field has {v.size} values but grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise ParameterError("field values must be finite")
        object.__setattr__(self, "values", _readonly(v.copy()))

    @classmethod
    def from_function(cls, grid: RadialGrid, fn) -> "Field":
        return cls(grid, np.broadcast_to(np.asarray(fn(grid.nodes), dtype=float), (grid.size,)))

    @classmethod
    def zeros(cls, grid: RadialGrid) -> "Field":
        return cls(grid, np.zeros(grid.size))

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def _other(self, other) -> np.ndarray:
        if isinstance(other, Field):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __mul__(self, c):
        if isinstance(c, Field):
            return Field(self.grid, self.values * self._other(c))
        return Field(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "value"])
            for r, v in zip(self.grid.nodes, self.values):
                w.writerow([f"{r:.17g}", f"{v:.17g}"])

    @classmethod
    def from_csv(cls, grid: RadialGrid, path) -> "Field":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] != grid.size or not np.allclose(data[:, 0], grid.nodes, rtol=1e-15, atol=0):
            raise GridMismatchError("CSV radii do not match the grid nodes")
        return cls(grid, data[:, 1])


def check_same_grid(*fields: Field) -> RadialGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if not grid.matches(f.grid):
            raise GridMismatchError("fields live on different grids")
    return grid


def _check_dim(dim) -> int:
    if isinstance(dim, bool) or int(dim) != dim or dim < 3:
        raise ParameterError(f"dim must be an integer >= 3, got {dim!r}")
    return int(dim)


def grid_from_nodes(dim: int, nodes: np.ndarray) -> RadialGrid:
    dim = _check_dim(dim)
    nodes = np.asarray(nodes, dtype=np.float64)
    if nodes.ndim != 1 or nodes.size < 3:
        raise ParameterError("need at least 3 nodes")
    if not np.all(np.isfinite(nodes)) or nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
        raise ParameterError("nodes must be finite, start at 0 and increase strictly")
    return RadialGrid(dim, float(nodes[-1]), _readonly(nodes), _readonly(_hat_weights(nodes, dim)))


def build_radial_grid(dim: int, radius: float = 1.0, node_count: int = 2000,
                      grading: float = 4.0) -> RadialGrid:
    """Nodes r_i = R (i/M)^grading, i = 0..M.

    ``grading = 1`` is uniform; larger values cluster nodes near the origin
    so the local spacing is proportional to r^(1 - 1/grading).
    """
    dim = _check_dim(dim)
    if not (math.isfinite(radius) and radius > 0):
        raise ParameterError(f"radius must be positive and finite, got {radius!r}")
    if isinstance(node_count, bool) or int(node_count) != node_count or node_count < 16:
        raise ParameterError(f"node_count must be an integer >= 16, got {node_count!r}")
    if not (math.isfinite(grading) and grading >= 1):
        raise ParameterError(f"grading must be a finite real >= 1, got {grading!r}")
    m = int(node_count) - 1
    s = np.arange(m + 1) / m
    nodes = radius * s**grading
    nodes[-1] = radius
    return grid_from_nodes(dim, nodes)


def integrate(grid: RadialGrid, f: Field) -> float:
    """Integral over the ball of the piecewise-linear interpolant of ``f``."""
    if not grid.matches(f.grid):
        raise GridMismatchError("field does not live on this grid")
    return float(grid.weights @ f.values)


def integrate_nonlinear(grid: RadialGrid, values_at_gauss: np.ndarray) -> float:
    """Integral of a pointwise integrand already evaluated at the Gauss points."""
    return float(np.sum(grid.gauss_weights * values_at_gauss))


def radial_derivative(grid: RadialGrid, f: Field) -> Field:
    """du/dr at the nodes from the staggered cell slopes (second order on graded grids)."""
    if not grid.matches(f.grid):
        raise GridMismatchError("field does not live on this grid")
    if grid.size < 3:
        raise ParameterError("radial_derivative needs at least 3 nodes")
    h = grid.widths
    d = grid.slopes(f.values)
    out = np.empty(grid.size)
    out[1:-1] = (h[1:] * d[:-1] + h[:-1] * d[1:]) / (h[:-1] + h[1:])
    out[0] = d[0] - h[0] * (d[1] - d[0]) / (h[0] + h[1])
    out[-1] = d[-1] + h[-1] * (d[-1] - d[-2]) / (h[-2] + h[-1])
    return Field(grid, out)


def lp_norm(grid: RadialGrid, f: Field, s: float) -> float:
    if not (s > 1):
        raise ParameterError(f"exponent must exceed 1, got {s!r}")
    if not grid.matches(f.grid):
        raise GridMismatchError("field does not live on this grid")
    return integrate_nonlinear(grid, np.abs(grid.at_gauss(f.values)) ** s) ** (1.0 / s)


def prolong(field: Field, grid: RadialGrid) -> Field:
    """Piecewise-linear transfer onto another grid of the same ball (exact for nested grids)."""
    if field.grid.dim != grid.dim or not math.isclose(field.grid.radius, grid.radius, rel_tol=1e-14):
        raise GridMismatchError("prolongation requires grids on the same ball")
    return Field(grid, np.interp(grid.nodes, field.grid.nodes, field.values))
