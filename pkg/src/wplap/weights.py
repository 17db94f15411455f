"""Matrix weight ``Q`` (cell centres) and scalar weight ``v`` (nodes).

A field is immutable after construction.  Eigen-decompositions are cached
at build time with the convention ``Q = U^T diag(lam) U`` (rows of ``U`` are
eigenvectors, eigenvalues ascending).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateWeight, InvalidField, SingularMatrix
from .grid import Grid

log = logging.getLogger(__name__)

FAMILIES = ("identity", "isotropic-power", "anisotropic-diagonal", "grid-file")

_SYM_TOL = 1e-12
_PSD_TOL = 1e-12


@dataclass(frozen=True)
class WeightFamilySpec:
    """Named weight family plus its parameters.

    identity
        ``Q = q I``, ``v = v`` (constants, both default 1).
    isotropic-power
        ``v = scale * d(x)^alpha`` and ``Q = d(x)^kappa I`` with ``d`` the
        distance to the boundary of the box; ``kappa`` defaults to ``alpha``.
    anisotropic-diagonal
        ``Q = diag(|x_i|^{a_i})`` with ``a = exponents``;
        ``v = max(lam_max^(envelope_p/2), v_min)``, so the upper ellipticity
        bound holds with equality for ``p = envelope_p``.
    grid-file
        ``Q`` and ``v`` read from ``path`` (see :func:`read_weight_file`).
    """

    family: str = "identity"
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidField(f"unknown weight family '{self.family}'")


def distance_to_boundary(grid, x):
    x = np.atleast_2d(x)
    lo = np.asarray(grid.lower)
    hi = np.asarray(grid.upper)
    return np.minimum(x - lo, hi - x).min(axis=1)


class MatrixWeightField:
    """Per-cell SPSD matrices ``Q``, nodal weight ``v`` and cell-centre ``v``."""

    def __init__(self, grid, Q, v_nodes, v_cells=None, spec=None):
        self.grid = grid
        N = grid.dim
        Q = np.array(Q, dtype=float).reshape(grid.n_cells, N, N)
        v_nodes = np.array(v_nodes, dtype=float).reshape(grid.n_nodes)
        if v_cells is None:
            v_cells = _nodes_to_cells(grid, v_nodes)
        v_cells = np.array(v_cells, dtype=float).reshape(grid.n_cells)
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(v_nodes)) and np.all(np.isfinite(v_cells))):
            raise InvalidField("non-finite entries in weight field")
        scale = np.abs(Q).max(axis=(1, 2))
        asym = np.abs(Q - Q.transpose(0, 2, 1)).max(axis=(1, 2))
        if np.any(asym > _SYM_TOL * np.maximum(scale, np.finfo(float).tiny)):
            raise InvalidField("Q is not symmetric")
        Q = 0.5 * (Q + Q.transpose(0, 2, 1))
        lam, vecs = np.linalg.eigh(Q)
        lam_scale = np.maximum(np.abs(lam).max(axis=1), np.finfo(float).tiny)
        if np.any(lam < -_PSD_TOL * lam_scale[:, None]):
            raise InvalidField("Q is not positive semidefinite")
        lam = np.maximum(lam, 0.0)
        if np.any(v_nodes < 0) or np.any(v_nodes[grid.interior] <= 0):
            raise DegenerateWeight("v must be positive at every interior node")
        self.Q = Q
        self.eigvals = lam
        self.U = vecs.transpose(0, 2, 1)
        self.v_nodes = v_nodes
        self.v_cells = v_cells
        self.spec = spec
        for arr in (self.Q, self.eigvals, self.U, self.v_nodes, self.v_cells):
            arr.setflags(write=False)

    @property
    def dim(self):
        return self.grid.dim

    @property
    def lambda_min(self):
        return self.eigvals[:, 0]

    @property
    def lambda_max(self):
        return self.eigvals[:, -1]

    @cached_property
    def sqrt_Q(self):
        return matrix_power(self, 0.5)

    @property
    def degenerate_cells(self):
        return self.lambda_min == 0.0

    def reconstruct(self):
        return np.einsum("cki,ck,ckj->cij", self.U, self.eigvals, self.U)


def _nodes_to_cells(grid, v_nodes):
    arr = v_nodes.reshape(grid.shape)
    for ax in range(grid.dim):
        sl_lo = [slice(None)] * grid.dim
        sl_hi = [slice(None)] * grid.dim
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        arr = 0.5 * (arr[tuple(sl_lo)] + arr[tuple(sl_hi)])
    return arr.ravel()


def build_field(spec, grid):
    """Sample a weight family on ``grid`` (``Q`` at cell centres, ``v`` at nodes)."""
    N = grid.dim
    prm = dict(spec.params)
    if spec.family == "identity":
        q = float(prm.get("q", 1.0))
        v = float(prm.get("v", 1.0))
        Q = np.broadcast_to(q * np.eye(N), (grid.n_cells, N, N))
        return MatrixWeightField(grid, Q, np.full(grid.n_nodes, v), np.full(grid.n_cells, v), spec)

    if spec.family == "isotropic-power":
        alpha = float(prm.get("alpha", 1.0))
        kappa = float(prm.get("kappa", alpha))
        scale = float(prm.get("scale", 1.0))
        if alpha < 0 or kappa < 0:
            raise InvalidField("isotropic-power exponents must be >= 0 (v and Q finite on the boundary)")
        vn = scale * distance_to_boundary(grid, grid.node_coords) ** alpha
        dc = distance_to_boundary(grid, grid.cell_centers)
        vc = scale * dc ** alpha
        Q = (dc ** kappa)[:, None, None] * np.eye(N)
        return MatrixWeightField(grid, Q, vn, vc, spec)

    if spec.family == "anisotropic-diagonal":
        a = np.broadcast_to(np.asarray(prm.get("exponents", 1.0), dtype=float), (N,))
        pe = float(prm.get("envelope_p", 2.0))
        vmin = float(prm.get("v_min", 0.0))

        def diag(x):
            with np.errstate(divide="ignore"):
                return np.abs(x) ** a

        dcell = diag(grid.cell_centers)
        Q = np.einsum("ci,ij->cij", dcell, np.eye(N))
        vn = np.maximum(diag(grid.node_coords).max(axis=1) ** (pe / 2), vmin)
        vc = np.maximum(dcell.max(axis=1) ** (pe / 2), vmin)
        return MatrixWeightField(grid, Q, vn, vc, spec)

    # grid-file
    fgrid, Q, vn = read_weight_file(prm["path"])
    if fgrid != grid:
        raise InvalidField("grid in weight file does not match the requested grid")
    return MatrixWeightField(grid, Q, vn, spec=spec)


def random_field(grid, rng, contrast=4.0, isotropic=False):
    """Random SPD field with ``lam_max <= 1 <= v``, so ``|sqrt(Q)|_op^p <= v`` for every p.

    Cell eigenvalues are log-uniform in ``[1/contrast, 1]``, eigenvectors
    random rotations; ``v`` at nodes is log-uniform in ``[1, contrast]``.
    """
    N = grid.dim
    lam = np.exp(rng.uniform(-np.log(contrast), 0.0, size=(grid.n_cells, N)))
    if isotropic:
        lam = np.repeat(lam[:, :1], N, axis=1)
    A = rng.normal(size=(grid.n_cells, N, N))
    Uq, _ = np.linalg.qr(A)
    Q = np.einsum("cij,cj,ckj->cik", Uq, lam, Uq)
    Q = 0.5 * (Q + Q.transpose(0, 2, 1))
    v = np.exp(rng.uniform(0.0, np.log(contrast), size=grid.n_nodes))
    return MatrixWeightField(grid, Q, v)


def matrix_power(field, r):
    """Per-cell ``Q^r = U^T diag(lam^r) U``."""
    lam = field.eigvals
    if r < 0 and np.any(lam == 0.0):
        raise SingularMatrix("negative power of a matrix with a zero eigenvalue")
    with np.errstate(divide="ignore"):
        lr = lam ** r
    return np.einsum("cki,ck,ckj->cij", field.U, lr, field.U)


def operator_norm(matrix):
    """Largest eigenvalue of a symmetric PSD matrix (or a stack of them)."""
    return np.linalg.eigvalsh(np.asarray(matrix, dtype=float))[..., -1]


def derive_w(field, p):
    """Lower ellipticity weight ``w = lam_min^(p/2)`` per cell.

    Cells where ``lam_min = 0`` get ``w = 0``; they are listed by
    ``field.degenerate_cells`` and logged, not rejected.
    """
    deg = field.degenerate_cells
    if deg.any():
        log.warning("derive_w: %d degenerate cells (lambda_min = 0)", int(deg.sum()))
    return field.lambda_min ** (p / 2.0)


@dataclass
class HypothesisReport:
    p: float
    v_integral: float
    v_integral_refined: float | None
    v_integrable: bool
    max_upper_excess: float
    upper_bound_ok: bool
    inverse_integral: float
    inverse_integral_refined: float | None
    inverse_integrable: bool
    sandwich_worst: float
    sandwich_ok: bool
    heuristic: bool = True

    @property
    def passed(self):
        return self.v_integrable and self.upper_bound_ok and self.inverse_integrable and self.sandwich_ok

    def lines(self):
        tag = " (heuristic quadrature check)" if self.heuristic else ""
        return [
            f"v integrable{tag}: {'PASS' if self.v_integrable else 'FAIL'} "
            f"(I_h={self.v_integral:.6g}, I_h/2={self.v_integral_refined})",
            f"|sqrt Q|_op^p <= v: {'PASS' if self.upper_bound_ok else 'FAIL'} "
            f"(max excess {self.max_upper_excess:.3e})",
            f"|sqrt(Q)^-1|_op^p' locally integrable{tag}: {'PASS' if self.inverse_integrable else 'FAIL'} "
            f"(I_h={self.inverse_integral:.6g}, I_h/2={self.inverse_integral_refined})",
            f"sandwich w|xi|^p <= |sqrt Q xi|^p <= v|xi|^p: {'PASS' if self.sandwich_ok else 'FAIL'} "
            f"(worst relative violation {self.sandwich_worst:.3e})",
        ]


def _refined(grid):
    return Grid(grid.lower, grid.upper, tuple(2 * (n - 1) + 1 for n in grid.shape))


def _interior_compact_mask(grid, margin=0.1):
    width = min(b - a for a, b in zip(grid.lower, grid.upper))
    return distance_to_boundary(grid, grid.cell_centers) >= margin * width


def _integrals(field, p):
    grid = field.grid
    iv = float(np.sum(field.v_nodes * grid.node_volume))
    pprime = p / (p - 1.0)
    K = _interior_compact_mask(grid)
    with np.errstate(divide="ignore"):
        inv = field.lambda_min[K] ** (-pprime / 2.0)
    ii = float(np.sum(inv) * grid.cell_volume)
    return iv, ii


def _finite_verdict(coarse, fine):
    if not np.isfinite(coarse):
        return False
    if fine is None:
        return True
    if not np.isfinite(fine):
        return False
    return abs(fine - coarse) <= 0.5 * max(abs(fine), np.finfo(float).tiny)


def check_hypothesis(field, p, n_samples=100, rng=None, slack=1e-10):
    """Check the structural assumptions on ``(Q, v)`` for exponent ``p``.

    Integrability verdicts compare the quadrature value on this grid with a
    once-refined grid (only possible when the field was built from a family
    spec); they are heuristics and flagged as such.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    iv, ii = _integrals(field, p)
    iv2 = ii2 = None
    if field.spec is not None and field.spec.family != "grid-file":
        fine = build_field(field.spec, _refined(field.grid))
        iv2, ii2 = _integrals(fine, p)

    top = field.lambda_max ** (p / 2.0)
    excess = top - field.v_cells
    upper_ok = bool(np.all(excess <= slack * np.maximum(1.0, field.v_cells)))

    N = field.dim
    xi = rng.normal(size=(field.grid.n_cells, n_samples, N))
    xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
    mid = np.einsum("csi,cij,csj->cs", xi, field.Q, xi)
    mid = np.maximum(mid, 0.0) ** (p / 2.0)
    w = field.lambda_min ** (p / 2.0)
    lo_viol = (w[:, None] - mid) / np.maximum(1.0, w[:, None])
    hi_viol = (mid - field.v_cells[:, None]) / np.maximum(1.0, field.v_cells[:, None])
    worst = float(max(lo_viol.max(), hi_viol.max()))

    return HypothesisReport(
        p=p,
        v_integral=iv, v_integral_refined=iv2, v_integrable=_finite_verdict(iv, iv2),
        max_upper_excess=float(excess.max()), upper_bound_ok=upper_ok,
        inverse_integral=ii, inverse_integral_refined=ii2, inverse_integrable=_finite_verdict(ii, ii2),
        sandwich_worst=worst, sandwich_ok=worst <= slack,
    )


# -- grid-file weights ------------------------------------------------------

def write_weight_file(path, field):
    """Write ``field`` in the grid-file format read by :func:`read_weight_file`."""
    grid = field.grid
    N = grid.dim
    iu = np.triu_indices(N)
    lines = [
        "# wplap weight field",
        f"dim {N}",
        "nodes " + " ".join(str(n) for n in grid.shape),
        "lower " + " ".join(repr(a) for a in grid.lower),
        "upper " + " ".join(repr(b) for b in grid.upper),
        "cells",
    ]
    for Qc in field.Q:
        lines.append(" ".join(f"{x:.17g}" for x in Qc[iu]))
    lines.append("v")
    lines.extend(f"{x:.17g}" for x in field.v_nodes)
    Path(path).write_text("\n".join(lines) + "\n")


def read_weight_file(path):
    """Parse a grid-file weight description.

    Layout (blank lines and ``#`` comments ignored)::

        dim <N>
        nodes <n_1> ... <n_N>
        lower <a_1> ... <a_N>      (optional, default 0)
        upper <b_1> ... <b_N>      (optional, default 1)
        cells
        <N(N+1)/2 upper-triangle entries of Q, row by row>   one line per cell
        v
        <v at one node per line>

    Cells and nodes are listed in row-major order, axis 0 slowest.
    Returns ``(grid, Q, v_nodes)``.
    """
    header = {}
    cells, vals = [], []
    section = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line in ("cells", "v"):
            section = line
            continue
        try:
            if section == "cells":
                cells.append([float(t) for t in line.split()])
            elif section == "v":
                vals.append(float(line))
            else:
                key, _, rest = line.partition(" ")
                header[key] = rest.split()
        except ValueError as exc:
            raise InvalidField(f"{path}:{lineno}: {exc}") from None
    N = int(header["dim"][0])
    shape = tuple(int(n) for n in header["nodes"])
    lower = tuple(float(a) for a in header.get("lower", ["0"] * N))
    upper = tuple(float(b) for b in header.get("upper", ["1"] * N))
    grid = Grid(lower, upper, shape)
    ntri = N * (N + 1) // 2
    cells = np.array(cells, dtype=float)
    if cells.shape != (grid.n_cells, ntri):
        raise InvalidField(f"expected {grid.n_cells} cell records of {ntri} entries, got {cells.shape}")
    if len(vals) != grid.n_nodes:
        raise InvalidField(f"expected {grid.n_nodes} nodal v values, got {len(vals)}")
    Q = np.zeros((grid.n_cells, N, N))
    iu = np.triu_indices(N)
    Q[:, iu[0], iu[1]] = cells
    Q[:, iu[1], iu[0]] = cells
    return grid, Q, np.array(vals)
