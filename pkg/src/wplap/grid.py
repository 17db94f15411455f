"""Structured box grids, discrete gradients, weighted norms and energies.

Nodes are stored in C (row-major) order, axis 0 slowest.  Cells are the
boxes between neighbouring nodes; a cell's gradient is the gradient of the
multilinear nodal interpolant evaluated at the cell centre.  Integrals
against ``dv`` use nodal (mass-lumped) quadrature, integrals against ``dx``
of gradient quantities use the cell-centre rule.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import BoundaryViolation, InvalidExponent


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned box ``prod_i (lower_i, upper_i)`` with ``shape[i]`` nodes per axis."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(a) for a in self.lower))
        object.__setattr__(self, "upper", tuple(float(b) for b in self.upper))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise ValueError("lower, upper and shape must have the same length")
        if not 1 <= len(self.shape) <= 3:
            raise ValueError("only dimensions 1, 2 and 3 are supported")
        if min(self.shape) < 3:
            raise ValueError("need at least 3 nodes per axis")
        if any(b <= a for a, b in zip(self.lower, self.upper)):
            raise ValueError("empty box")

    @classmethod
    def box(cls, nodes, lower=0.0, upper=1.0, dim=None):
        """Convenience constructor; scalars are broadcast over ``dim`` axes."""
        if dim is None:
            dim = len(nodes) if np.ndim(nodes) else 1
        bc = lambda a: tuple(np.broadcast_to(np.asarray(a, dtype=float), (dim,)))
        return cls(bc(lower), bc(upper), tuple(np.broadcast_to(np.asarray(nodes), (dim,))))

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.lower == other.lower
                and self.upper == other.upper and self.shape == other.shape)

    def __hash__(self):
        return hash((self.lower, self.upper, self.shape))

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple((b - a) / (n - 1) for a, b, n in zip(self.lower, self.upper, self.shape))

    @property
    def cell_shape(self):
        return tuple(n - 1 for n in self.shape)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def n_cells(self):
        return int(np.prod(self.cell_shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod([b - a for a, b in zip(self.lower, self.upper)]))

    def axes(self):
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.shape)]

    @cached_property
    def node_coords(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def cell_centers(self):
        mids = [0.5 * (x[1:] + x[:-1]) for x in self.axes()]
        mesh = np.meshgrid(*mids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def node_volume(self):
        """Trapezoidal (lumped) quadrature weight of every node."""
        w1 = []
        for h, n in zip(self.spacing, self.shape):
            w = np.full(n, h)
            w[0] = w[-1] = h / 2
            w1.append(w)
        out = w1[0]
        for w in w1[1:]:
            out = np.multiply.outer(out, w)
        return np.ascontiguousarray(out.ravel())

    @cached_property
    def boundary_mask(self):
        idx = np.indices(self.shape).reshape(self.dim, -1)
        mask = np.zeros(self.n_nodes, dtype=bool)
        for ax, n in enumerate(self.shape):
            mask |= (idx[ax] == 0) | (idx[ax] == n - 1)
        return mask

    @cached_property
    def interior(self):
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def gradient_matrix(self):
        """Sparse map from nodal values to per-cell gradients.

        Row ``c * dim + i`` holds the i-th partial derivative on cell ``c``.
        """
        blocks = []
        for i in range(self.dim):
            factors = []
            for j, (n, h) in enumerate(zip(self.shape, self.spacing)):
                if j == i:
                    factors.append(sp.diags([-1.0 / h, 1.0 / h], [0, 1], shape=(n - 1, n)))
                else:
                    factors.append(sp.diags([0.5, 0.5], [0, 1], shape=(n - 1, n)))
            op = factors[0]
            for fac in factors[1:]:
                op = sp.kron(op, fac)
            blocks.append(sp.csr_matrix(op))
        # interleave so that the gradient of one cell is contiguous
        stacked = sp.vstack(blocks).tocsr()
        perm = np.arange(self.dim * self.n_cells).reshape(self.dim, self.n_cells).T.ravel()
        return stacked[perm].tocsr()

    @cached_property
    def interior_gradient_matrix(self):
        return self.gradient_matrix[:, self.interior].tocsr()

    def zeros(self):
        return GridFunction(self, np.zeros(self.n_nodes))


def _values(u):
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


@dataclass(eq=False)
class GridFunction:
    """Nodal values that vanish on the boundary of the box."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).reshape(-1)
        if self.values.size != self.grid.n_nodes:
            raise ValueError(f"expected {self.grid.n_nodes} nodal values, got {self.values.size}")
        if np.any(self.values[self.grid.boundary_mask] != 0.0):
            raise BoundaryViolation("grid function must vanish on boundary nodes")

    @classmethod
    def from_callable(cls, grid, fn):
        """Sample ``fn(x)`` (x of shape (n_nodes, dim)) and zero the boundary."""
        vals = np.asarray(fn(grid.node_coords), dtype=float).reshape(-1)
        vals = np.broadcast_to(vals, (grid.n_nodes,)).copy()
        vals[grid.boundary_mask] = 0.0
        return cls(grid, vals)

    @classmethod
    def from_interior(cls, grid, x):
        vals = np.zeros(grid.n_nodes)
        vals[grid.interior] = x
        return cls(grid, vals)

    @property
    def interior_values(self):
        return self.values[self.grid.interior]

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise ValueError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __mul__(self, s):
        return GridFunction(self.grid, self.values * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def positive_part(self):
        return GridFunction(self.grid, np.maximum(self.values, 0.0))


@dataclass(eq=False)
class CellVectorField:
    grid: Grid
    values: np.ndarray  # (n_cells, dim)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.n_cells, self.grid.dim)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cell vector field has non-finite entries")


def gradient(u):
    """Per-cell gradient of the multilinear interpolant of ``u``."""
    grid = u.grid
    g = grid.gradient_matrix @ u.values
    return CellVectorField(grid, g.reshape(grid.n_cells, grid.dim))


def _check_q(q):
    if not (q == np.inf or q >= 1):
        raise InvalidExponent(f"exponent must be >= 1 or inf, got {q}")


def norm_Lq_v(u, q, field):
    """``(sum_nodes |u|^q v dV)^(1/q)``; for ``q = inf`` the max over nodes with v > 0."""
    _check_q(q)
    vals = np.abs(_values(u))
    v = field.v_nodes
    if q == np.inf:
        mask = v > 0
        return float(vals[mask].max()) if mask.any() else 0.0
    w = v * field.grid.node_volume
    if q == 1:
        return float(np.sum(vals * w))
    return float(np.sum(vals ** q * w) ** (1.0 / q))


def weighted_modulus(g, field):
    """Per-cell ``|sqrt(Q) g|`` computed as ``sqrt(g . Q g)``."""
    vals = g.values if isinstance(g, CellVectorField) else np.asarray(g, dtype=float)
    vals = vals.reshape(field.grid.n_cells, field.grid.dim)
    s = np.einsum("ci,cij,cj->c", vals, field.Q, vals)
    return np.sqrt(np.maximum(s, 0.0))


def norm_LpQ(g, p, field):
    _check_q(p)
    mod = weighted_modulus(g, field)
    vol = field.grid.cell_volume
    if p == np.inf:
        return float(mod.max())
    return float(np.sum(mod ** p * vol) ** (1.0 / p))


def norm_H1pQ(u, p, field):
    return norm_Lq_v(u, p, field) + norm_LpQ(gradient(u), p, field)


def dirichlet_energy(u, p, field):
    """``(1/p) * integral |sqrt(Q) grad u|^p dx``."""
    return norm_LpQ(gradient(u), p, field) ** p / p


def weighted_mass(field):
    """Quadrature value of ``v(Omega)`` (all nodes, boundary included)."""
    return float(np.sum(field.v_nodes * field.grid.node_volume))


# -- snapshot files ---------------------------------------------------------

def write_snapshot(path, u, t=0.0):
    """Write ``u`` as a plain-text snapshot.

    Format::

        # wplap snapshot
        dim <N>
        nodes <n_1> ... <n_N>
        lower <a_1> ... <a_N>
        upper <b_1> ... <b_N>
        time <t>
        values
        <one value per line, row-major node order>
    """
    grid = u.grid
    lines = [
        "# wplap snapshot",
        f"dim {grid.dim}",
        "nodes " + " ".join(str(n) for n in grid.shape),
        "lower " + " ".join(repr(a) for a in grid.lower),
        "upper " + " ".join(repr(b) for b in grid.upper),
        f"time {float(t)!r}",
        "values",
    ]
    lines.extend(f"{x:.17g}" for x in u.values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(GridFunction, t)``."""
    header = {}
    values = []
    in_values = False
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if in_values:
            values.append(float(line))
            continue
        if line == "values":
            in_values = True
            continue
        key, _, rest = line.partition(" ")
        header[key] = rest.split()
    grid = Grid(tuple(map(float, header["lower"])), tuple(map(float, header["upper"])),
                tuple(map(int, header["nodes"])))
    if int(header["dim"][0]) != grid.dim:
        raise ValueError("snapshot dim does not match node counts")
    return GridFunction(grid, np.array(values)), float(header.get("time", ["0"])[0])
