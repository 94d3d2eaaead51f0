"""Radial grids on a truncated half-line, quadrature against r dr, and
finite-difference calculus.

Two quadratures live on a grid:

* ``weights`` -- nodal weights, one per node.  Each cell [r_i, r_{i+1}]
  contributes (r_{i+1}^2 - r_i^2)/4 to both of its end nodes, so constants
  are integrated exactly against r dr.  Used by :func:`integrate` and as the
  (diagonal, positive) mass matrix of the eigenproblems.
* ``cell_weights`` -- one weight per cell, the midpoint rule in the grid's
  uniform coordinate (r for ``uniform``, ln r for ``geometric``).  Quadratic
  forms are evaluated with it from cell-centred values and derivatives
  produced by ``cell_interp`` / ``cell_deriv``.  For integrands with compact
  support inside the grid the rule is spectrally accurate, so the accuracy of
  a form is set by the stencil width of the cell operators alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from anisovortex.errors import ParameterError, ShapeError

KINDS = ("uniform", "geometric")


def fornberg_weights(z, x, m):
    """Finite-difference weights at ``z`` for derivatives 0..m from nodes ``x``.

    Returns an array ``c`` of shape (m + 1, len(x)); ``c[k] @ u(x)``
    approximates the k-th derivative of u at z.  Fornberg (1988).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _stencil_start(center_index, width, n):
    return int(np.clip(center_index - width // 2 + 1, 0, n - width))


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Ordered nodes on [r_min, r_max] with r dr quadrature.

    ``stencil`` is the number of nodes used by the cell-centred
    interpolation/derivative operators (2 gives the classical piecewise
    linear scheme, 6 the default high-order one).
    """

    r_min: float
    r_max: float
    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    stencil: int = 6

    def __len__(self):
        return len(self.nodes)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_cells(self):
        return len(self.nodes) - 1

    def coordinate(self, r):
        """Map radii to the coordinate in which the grid is uniform."""
        r = np.asarray(r, dtype=float)
        return np.log(r) if self.kind == "geometric" else r

    def inverse_coordinate(self, s):
        s = np.asarray(s, dtype=float)
        return np.exp(s) if self.kind == "geometric" else s

    @cached_property
    def centers(self):
        s = self.coordinate(self.nodes)
        return self.inverse_coordinate(0.5 * (s[1:] + s[:-1]))

    @cached_property
    def cell_weights(self):
        s = self.coordinate(self.nodes)
        ds = np.diff(s)
        rc = self.centers
        if self.kind == "geometric":
            # dr = r ds, so r dr = r^2 ds
            return ds * rc**2
        return ds * rc

    @cached_property
    def _cell_operators(self):
        n = self.n_nodes
        width = min(self.stencil, n)
        rows, cols, vi, vd = [], [], [], []
        for c, z in enumerate(self.centers):
            j0 = _stencil_start(c, width, n)
            idx = np.arange(j0, j0 + width)
            w = fornberg_weights(z, self.nodes[idx], 1)
            rows.extend([c] * width)
            cols.extend(idx)
            vi.extend(w[0])
            vd.extend(w[1])
        shape = (self.n_cells, n)
        interp = sp.csr_matrix((vi, (rows, cols)), shape=shape)
        deriv = sp.csr_matrix((vd, (rows, cols)), shape=shape)
        return interp, deriv

    @property
    def cell_interp(self):
        """Sparse (n_cells, n_nodes) map from nodal values to cell centres."""
        return self._cell_operators[0]

    @property
    def cell_deriv(self):
        """Sparse (n_cells, n_nodes) map from nodal values to d/dr at centres."""
        return self._cell_operators[1]

    def at_cells(self, g):
        """Cell-centre values and r-derivatives of nodal samples ``g``."""
        g = _values(self, g)
        return self.cell_interp @ g, self.cell_deriv @ g

    def cell_integrate(self, values):
        values = np.asarray(values)
        if values.shape[-1] != self.n_cells:
            raise ShapeError(f"expected {self.n_cells} cell values, got {values.shape[-1]}")
        return values @ self.cell_weights

    @cached_property
    def _matrix_cache(self):
        return {}

    def with_stencil(self, stencil):
        return RadialGrid(self.r_min, self.r_max, self.nodes, self.weights, self.kind, stencil)


@dataclass(frozen=True, eq=False)
class RadialFunction:
    grid: RadialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_nodes,):
            raise ShapeError(f"values have shape {values.shape}, grid has {self.grid.n_nodes} nodes")
        object.__setattr__(self, "values", values)

    @property
    def vanishes_at_endpoints(self):
        return self.values[0] == 0.0 and self.values[-1] == 0.0


def _values(grid, g):
    if isinstance(g, RadialFunction):
        if g.grid is not grid and not np.array_equal(g.grid.nodes, grid.nodes):
            raise ShapeError("function lives on a different grid")
        return g.values
    g = np.asarray(g)
    if g.shape[-1:] != (grid.n_nodes,):
        raise ShapeError(f"expected {grid.n_nodes} nodal values, got shape {g.shape}")
    return g


def nodal_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    cell = 0.25 * np.diff(nodes**2)
    w = np.zeros_like(nodes)
    w[:-1] += cell
    w[1:] += cell
    return w


def grid_from_nodes(nodes, kind, stencil=6):
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or len(nodes) < 2 or np.any(np.diff(nodes) <= 0) or nodes[0] <= 0:
        raise ParameterError("nodes must be positive and strictly increasing")
    if kind not in KINDS:
        raise ParameterError(f"kind must be one of {KINDS}, got {kind!r}")
    return RadialGrid(float(nodes[0]), float(nodes[-1]), nodes, nodal_weights(nodes), kind, stencil)


def build_grid(r_min, r_max, n_nodes, kind="geometric", stencil=6):
    """Grid of ``n_nodes`` nodes on [r_min, r_max].

    ``geometric`` nodes are equispaced in ln r and therefore cluster near
    r_min, where the 1/r^2 weights of the forms are largest.
    """
    if not (np.isfinite(r_min) and np.isfinite(r_max)) or not 0 < r_min < r_max:
        raise ParameterError(f"need 0 < r_min < r_max, got ({r_min}, {r_max})")
    if int(n_nodes) != n_nodes or n_nodes < 16:
        raise ParameterError(f"n_nodes must be an integer >= 16, got {n_nodes}")
    if kind not in KINDS:
        raise ParameterError(f"kind must be one of {KINDS}, got {kind!r}")
    if stencil < 2:
        raise ParameterError("stencil needs at least two nodes")
    n_nodes = int(n_nodes)
    if kind == "geometric":
        nodes = np.exp(np.linspace(np.log(r_min), np.log(r_max), n_nodes))
    else:
        nodes = np.linspace(r_min, r_max, n_nodes)
    nodes[0], nodes[-1] = r_min, r_max
    return RadialGrid(float(r_min), float(r_max), nodes, nodal_weights(nodes), kind, stencil)


def geometric_grid_through(r_a, r_b, cells_between, r_min, r_max, stencil=6):
    """Geometric grid having both ``r_a`` and ``r_b`` as nodes.

    The log-spacing is fixed by ``cells_between`` cells on [r_a, r_b]; the
    grid is then extended with the same spacing until it covers
    [r_min, r_max] (so the actual end radii can overshoot slightly).
    """
    if not 0 < r_min <= r_a < r_b <= r_max:
        raise ParameterError("need 0 < r_min <= r_a < r_b <= r_max")
    sa, sb = np.log(r_a), np.log(r_b)
    ds = (sb - sa) / int(cells_between)
    below = int(np.ceil((sa - np.log(r_min)) / ds - 1e-9))
    above = int(np.ceil((np.log(r_max) - sb) / ds - 1e-9))
    k = np.arange(-below, cells_between + above + 1)
    nodes = np.exp(sa + k * ds)
    nodes[below] = r_a
    nodes[below + cells_between] = r_b
    return grid_from_nodes(nodes, "geometric", stencil)


def integrate(grid, g):
    """Quadrature of the integral of g(r) r dr over the grid (O(h^2))."""
    return float(np.dot(grid.weights, _values(grid, g)))


def _nodal_derivative_matrix(grid, order, deriv=1):
    n = grid.n_nodes
    width = order + 1
    # centred stencils need an odd width
    if width % 2 == 0:
        width += 1
    width = min(width, n)
    half = width // 2
    rows, cols, vals = [], [], []
    for i in range(n):
        j0 = int(np.clip(i - half, 0, n - width))
        idx = np.arange(j0, j0 + width)
        w = fornberg_weights(grid.nodes[i], grid.nodes[idx], deriv)[deriv]
        rows.extend([i] * width)
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def derivative_matrix(grid, order=2, deriv=1):
    """Sparse nodal differentiation matrix, centred inside, one-sided at ends."""
    cache = grid._matrix_cache
    key = (order, deriv)
    if key not in cache:
        cache[key] = _nodal_derivative_matrix(grid, order, deriv)
    return cache[key]


def differentiate(grid, g, order=2):
    """Nodal derivative of ``g``.

    ``order=2`` gives centred second-order differences at interior nodes and
    one-sided second-order differences at the two endpoints.  Higher even
    orders widen the stencils accordingly.
    """
    if order < 1:
        raise ParameterError("order must be positive")
    return derivative_matrix(grid, order) @ _values(grid, g)
