"""One implicit Euler step: the proximal map of the weighted p-Dirichlet energy.

For ``u_prev`` and step ``tau`` the step solves

    min_u  D_p^delta(u) + 1/(2 tau) ||u - u_prev||^2_{L^2_v}

over nodal functions vanishing on the boundary, with the regularised
integrand ``((|sqrt(Q) grad u|^2 + delta^2)^(p/2) - delta^p) / p``.

* ``p == 2`` is a linear SPD system, solved with diagonally preconditioned CG.
* otherwise: Polak-Ribiere nonlinear CG with Armijo backtracking,
  preconditioned by the frozen-coefficient operator
  ``M_v/tau + G^T diag(vol w Q) G`` with ``w = (s + delta^2)^(p/2 - 1)``
  (sparse LU, refreshed every few iterations).  For ``p < 2`` ``delta`` is
  driven geometrically to a floor proportional to the largest gradient of
  ``u_prev``.

Energy differences in the line search are evaluated from per-cell increments
(``expm1``/``log1p``) so that Armijo remains meaningful when the iterate is
within round-off of the minimiser.

The stopping test uses the scaled residual
``||grad F||_{M^-1} / (||u_prev||_M / tau)``; since ``F`` is ``M/tau``-strongly
convex this bounds the relative ``L^2_v`` distance to the exact minimiser.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidParameters, NonConvergence, NumericalBreakdown
from .grid import GridFunction, gradient

log = logging.getLogger(__name__)


@dataclass
class InnerSolverConfig:
    gtol: float = 1e-9
    stage_gtol: float = 1e-6
    max_iter: int = 400
    linear_rtol: float = 1e-12
    linear_max_iter: int = 50000
    delta_start: float = 1e-2
    delta_factor: float = 0.1
    delta_floor: float = 1e-8
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    precond_refresh: int = 4
    force_nonlinear: bool = False

    def __post_init__(self):
        if min(self.gtol, self.stage_gtol, self.linear_rtol) <= 0:
            raise InvalidParameters("tolerances must be positive")
        if not 0 < self.delta_factor < 1:
            raise InvalidParameters("delta_factor must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise InvalidParameters("backtrack must lie in (0, 1)")


@dataclass
class ProxProblem:
    u_prev: GridFunction
    tau: float
    p: float
    field: object
    delta: float | None = None  # None: continuation schedule (p < 2) or 0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidParameters("tau must be positive")
        if not self.p > 1:
            raise InvalidParameters("p must exceed 1")
        if self.delta is not None and self.delta < 0:
            raise InvalidParameters("delta must be >= 0")
        if self.u_prev.grid != self.field.grid:
            raise InvalidParameters("u_prev and weight field live on different grids")


@dataclass
class ProxResult:
    u: GridFunction
    iterations: int = 0
    residual: float = 0.0
    stages: list = dc_field(default_factory=list)
    max_energy_change: float = 0.0  # largest accepted F increment (must be <= 0)


class _Objective:
    def __init__(self, field, f, tau, p, delta):
        grid = field.grid
        self.G = grid.interior_gradient_matrix
        self.N = grid.dim
        self.nc = grid.n_cells
        self.Q = field.Q
        self.vol = grid.cell_volume
        self.m = (field.v_nodes * grid.node_volume)[grid.interior]
        self.f = f
        self.tau = tau
        self.p = p
        self.delta = delta

    def cell_terms(self, x):
        g = (self.G @ x).reshape(self.nc, self.N)
        Qg = np.einsum("cij,cj->ci", self.Q, g)
        s = np.maximum(np.einsum("ci,ci->c", g, Qg), 0.0)
        return g, Qg, s

    def weights(self, s):
        base = s + self.delta ** 2
        if self.p >= 2:
            return base ** (self.p / 2 - 1)
        with np.errstate(divide="ignore"):
            w = base ** (self.p / 2 - 1)
        return np.minimum(w, 1e300)

    def value(self, x, s):
        d2 = self.delta ** 2
        e = np.sum(((s + d2) ** (self.p / 2) - d2 ** (self.p / 2)) / self.p) * self.vol
        r = x - self.f
        return e + np.sum(self.m * r * r) / (2 * self.tau)

    def grad(self, x, Qg, s):
        flux = self.weights(s)[:, None] * Qg * self.vol
        return self.G.T @ flux.ravel() + self.m * (x - self.f) / self.tau

    def increment(self, x, g, s, d, alpha, dg, Qdg):
        """``F(x + alpha d) - F(x)`` without cancellation."""
        a1 = np.einsum("ci,ci->c", g, Qdg)
        a2 = np.einsum("ci,ci->c", dg, Qdg)
        ds = alpha * (2 * a1 + alpha * a2)
        base = s + self.delta ** 2
        half = self.p / 2
        pos = base > 0
        dphi = np.empty_like(s)
        bp = base[pos]
        ratio = np.maximum(ds[pos] / bp, -1.0)
        small = np.abs(ratio) <= 0.5
        with np.errstate(divide="ignore"):
            # expm1/log1p only where the relative change is small (cancellation);
            # elsewhere the plain difference is exact enough and cannot overflow
            dphi[pos] = np.where(
                small, bp ** half * np.expm1(half * np.log1p(np.where(small, ratio, 0.0))),
                np.maximum(bp + ds[pos], 0.0) ** half - bp ** half) / self.p
        dphi[~pos] = np.maximum(ds[~pos], 0.0) ** half / self.p
        de = np.sum(dphi) * self.vol
        r = x - self.f
        dm = (alpha * np.sum(self.m * r * d) + 0.5 * alpha ** 2 * np.sum(self.m * d * d)) / self.tau
        return de + dm

    def operator(self, w):
        """Sparse ``M/tau + G^T diag(vol w Q) G`` on interior unknowns."""
        blocks = (self.vol * w)[:, None, None] * self.Q
        B = sp.bsr_matrix((blocks, np.arange(self.nc), np.arange(self.nc + 1)),
                          shape=(self.nc * self.N, self.nc * self.N))
        K = self.G.T @ (B.tocsr() @ self.G)
        return (K + sp.diags(self.m / self.tau)).tocsc()


def _dual_norm(r, m):
    return float(np.sqrt(np.sum(r * r / m)))


def _pcg(A, b, m, scale, rtol, max_iter):
    """Jacobi-preconditioned CG, stopped on the ``M^-1``-weighted residual."""
    dinv = 1.0 / A.diagonal()
    x = b * dinv
    r = b - A @ x
    z = dinv * r
    d = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        res = _dual_norm(r, m) / scale
        if res <= rtol:
            return x, it - 1, res
        Ad = A @ d
        alpha = rz / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        z = dinv * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    res = _dual_norm(r, m) / scale
    if res <= rtol:
        return x, max_iter, res
    raise NonConvergence(f"linear CG did not reach rtol={rtol:g} (residual {res:.3e})", residual=res)


def _slope_at(obj, x, s, d, a1, a2, alpha):
    """Directional derivative ``d/dalpha F(x + alpha d)``."""
    sa = np.maximum(s + alpha * (2 * a1 + alpha * a2), 0.0)
    de = np.sum(obj.weights(sa) * (a1 + alpha * a2)) * obj.vol
    return de + np.sum(obj.m * (x - obj.f + alpha * d) * d) / obj.tau


def _line_search(obj, x, g, s, d, slope, cfg):
    """Approximate exact line search along ``d`` followed by an Armijo gate.

    The step is located by bracketing the zero of the (monotone)
    directional derivative and refining with Illinois regula falsi until
    ``|phi'(alpha)| <= 0.1 |phi'(0)|``.  Returns ``(alpha, dF)`` or
    ``(0, 0)`` when no decrease could be certified.
    """
    dg = (obj.G @ d).reshape(obj.nc, obj.N)
    Qdg = np.einsum("cij,cj->ci", obj.Q, dg)
    a1 = np.einsum("ci,ci->c", g, Qdg)
    a2 = np.einsum("ci,ci->c", dg, Qdg)
    lo, flo = 0.0, slope
    hi = 1.0
    fhi = _slope_at(obj, x, s, d, a1, a2, hi)
    while fhi < 0 and hi < 2.0 ** 40:
        lo, flo = hi, fhi
        hi *= 2.0
        fhi = _slope_at(obj, x, s, d, a1, a2, hi)
    alpha = hi if fhi < 0 else None
    if alpha is None:
        side = 0
        alpha = hi
        for _ in range(60):
            alpha = hi - fhi * (hi - lo) / (fhi - flo)
            if not lo < alpha < hi:
                alpha = 0.5 * (lo + hi)
            fa = _slope_at(obj, x, s, d, a1, a2, alpha)
            if abs(fa) <= 0.1 * abs(slope):
                break
            if fa < 0:
                lo, flo = alpha, fa
                if side == -1:
                    fhi *= 0.5
                side = -1
            else:
                hi, fhi = alpha, fa
                if side == 1:
                    flo *= 0.5
                side = 1
    for _ in range(cfg.max_backtracks):
        dF = obj.increment(x, g, s, d, alpha, dg, Qdg)
        if not np.isfinite(dF):
            raise NumericalBreakdown("non-finite energy increment")
        if dF <= cfg.armijo_c * alpha * slope:
            return alpha, dF
        alpha *= cfg.backtrack
    return 0.0, 0.0


def _ncg_stage(obj, x, tol, cfg):
    """Minimise ``obj`` from ``x``; returns ``(x, iterations, residual, max dF)``."""
    scale = np.sqrt(np.sum(obj.m * obj.f ** 2)) / obj.tau
    g, Qg, s = obj.cell_terms(x)
    grad = obj.grad(x, Qg, s)
    if not np.all(np.isfinite(grad)):
        raise NumericalBreakdown("non-finite gradient")
    lu = None
    d_old = z_old = grad_old = None
    max_df = -np.inf
    res = _dual_norm(grad, obj.m) / scale
    it = 0
    since_refresh = 0
    while it < cfg.max_iter and res > tol:
        restart = lu is None or since_refresh >= cfg.precond_refresh
        if restart:
            lu = splu(obj.operator(obj.weights(s)))
            since_refresh = 0
        z = lu.solve(grad)
        d = -z
        if not restart and d_old is not None:
            beta = max(0.0, z @ (grad - grad_old) / (z_old @ grad_old))
            d = d + beta * d_old
            if d @ grad >= 0:
                d = -z
        slope = d @ grad
        alpha, dF = _line_search(obj, x, g, s, d, slope, cfg)
        it += 1
        since_refresh += 1
        if alpha == 0.0:
            if restart:
                break  # no certified decrease even along the fresh direction
            lu = None
            d_old = None
            continue
        max_df = max(max_df, dF)
        x = x + alpha * d
        grad_old, z_old, d_old = grad, z, d
        g, Qg, s = obj.cell_terms(x)
        grad = obj.grad(x, Qg, s)
        if not np.all(np.isfinite(grad)):
            raise NumericalBreakdown("non-finite gradient")
        res = _dual_norm(grad, obj.m) / scale
    if res > tol:
        raise NonConvergence(
            f"inner optimizer stopped at residual {res:.3e} > {tol:g} after {it} iterations",
            residual=res)
    return x, it, res, max_df


def solve_prox(problem, cfg=None):
    """Full prox solve with diagnostics; see :func:`prox_step`."""
    cfg = InnerSolverConfig() if cfg is None else cfg
    field = problem.field
    grid = field.grid
    f = problem.u_prev.interior_values.copy()
    m = (field.v_nodes * grid.node_volume)[grid.interior]
    if not np.any(f):
        return ProxResult(problem.u_prev.grid.zeros())
    p, tau = problem.p, problem.tau

    if p == 2 and not cfg.force_nonlinear:
        obj = _Objective(field, f, tau, p, 0.0)
        A = obj.operator(np.ones(grid.n_cells)).tocsr()
        scale = np.sqrt(np.sum(m * f * f)) / tau
        x, its, res = _pcg(A, m * f / tau, m, scale, cfg.linear_rtol, cfg.linear_max_iter)
        out = ProxResult(GridFunction.from_interior(grid, x), its, res, [0.0])
        log.debug("prox p=2 linear", extra={"iterations": its, "residual": res})
        return out

    # Work with data of unit size: prox_tau(s g) = s prox_{tau s^(p-2)}(g).
    # Near extinction (p < 2) the data shrinks super-exponentially and would
    # otherwise underflow in the residual scale.
    amp = float(np.max(np.abs(f)))
    tau_eff = tau * amp ** (p - 2)
    if tau_eff == 0.0:
        return ProxResult(problem.u_prev)
    if not np.isfinite(tau_eff):
        return ProxResult(grid.zeros())
    tau = tau_eff
    f = f / amp
    delta_user = None if problem.delta is None else problem.delta / amp

    if delta_user is not None:
        deltas = [delta_user]
    elif p >= 2:
        deltas = [0.0]
    else:
        g0 = gradient(GridFunction.from_interior(grid, f)).values
        gscale = float(np.sqrt(np.einsum("ci,cij,cj->c", g0, field.Q, g0).max()))
        deltas = []
        d = cfg.delta_start * gscale
        floor = cfg.delta_floor * gscale
        while d > floor * (1 + 1e-9):
            deltas.append(d)
            d *= cfg.delta_factor
        deltas.append(floor)

    x = f.copy()
    total = 0
    max_df = -np.inf
    res = np.nan
    for j, delta in enumerate(deltas):
        tol = cfg.gtol if j == len(deltas) - 1 else max(cfg.gtol, cfg.stage_gtol)
        obj = _Objective(field, f, tau, p, delta)
        x, its, res, mdf = _ncg_stage(obj, x, tol, cfg)
        total += its
        max_df = max(max_df, mdf)
        log.debug("prox stage", extra={"delta": delta, "iterations": its, "residual": res})
    return ProxResult(GridFunction.from_interior(grid, amp * x), total, res, [amp * d for d in deltas],
                      float(max_df) if np.isfinite(max_df) else 0.0)


def prox_step(problem, cfg=None):
    """Minimiser of ``D_p(u) + ||u - u_prev||^2_{L^2_v} / (2 tau)`` (zero boundary)."""
    return solve_prox(problem, cfg).u


def resolvent(f, field, p, cfg=None):
    """``(id + dD_p)^{-1} f``: the prox step with ``tau = 1`` and ``u_prev = f``."""
    return prox_step(ProxProblem(f, 1.0, p, field), cfg)


def flux(u, field, p):
    """Per-cell ``|sqrt(Q) grad u|^(p-2) Q grad u`` (zero where the gradient vanishes)."""
    g = gradient(u).values
    Qg = np.einsum("cij,cj->ci", field.Q, g)
    s = np.maximum(np.einsum("ci,ci->c", g, Qg), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(s > 0, s ** (p / 2 - 1), 0.0 if p != 2 else 1.0)
    return w[:, None] * Qg


def weak_residual(u_next, u_prev, tau, phi, field, p):
    """Left side of the discrete weak form tested with ``phi``."""
    grid = field.grid
    a = flux(u_next, field, p)
    gphi = gradient(phi).values
    diff = tau * np.sum(np.einsum("ci,ci->c", a, gphi)) * grid.cell_volume
    mass = np.sum((u_next.values - u_prev.values) * phi.values * field.v_nodes * grid.node_volume)
    return float(diff + mass)


# -- vector inequalities ----------------------------------------------------

def _a(x, p):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(n > 0, n ** (p - 2), 0.0)
    return w * x


def simon_sides(xi, zeta, p):
    """Both sides (without constants) of the two monotonicity inequalities.

    Returns ``(lhs1, rhs1, lhs2, rhs2)`` such that the inequalities read
    ``lhs1 <= C rhs1`` and ``lhs2 <= C~ rhs2``.  For ``p >= 2``::

        |x - z|^p             <= C  (a(x) - a(z)) . (x - z)
        |a(x) - a(z)|         <= C~ |x - z| (|x| + |z|)^(p-2)

    and for ``1 < p < 2``::

        |x - z|^2 / (|x| + |z|)^(2-p) <= C  (a(x) - a(z)) . (x - z)
        |a(x) - a(z)|                 <= C~ |x - z|^(p-1)

    where ``a(x) = |x|^(p-2) x``.
    """
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    diff = xi - zeta
    nd = np.linalg.norm(diff, axis=-1)
    da = _a(xi, p) - _a(zeta, p)
    mono = np.einsum("...i,...i->...", da, diff)
    nda = np.linalg.norm(da, axis=-1)
    ssum = np.linalg.norm(xi, axis=-1) + np.linalg.norm(zeta, axis=-1)
    if p >= 2:
        return nd ** p, mono, nda, nd * ssum ** (p - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs1 = np.where(nd > 0, nd ** 2 * ssum ** (p - 2), 0.0)
    return lhs1, mono, nda, nd ** (p - 1)


@dataclass
class SimonReport:
    p: float
    samples: int
    C: float
    C_tilde: float
    C_calibrated: float
    C_tilde_calibrated: float
    margin: float

    @property
    def passed(self):
        return bool(np.isfinite(self.C) and np.isfinite(self.C_tilde)
                    and self.C <= self.C_calibrated * (1 + self.margin)
                    and self.C_tilde <= self.C_tilde_calibrated * (1 + self.margin))


def _simon_constants(p, n, rng, dim, batch=200_000):
    C = Ct = 0.0
    done = 0
    while done < n:
        k = min(batch, n - done)
        xi = rng.normal(size=(k, dim))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        eta = rng.normal(size=(k, dim))
        eta /= np.linalg.norm(eta, axis=1, keepdims=True)
        rho = 10.0 ** rng.uniform(-3, 3, size=(k, 1))
        zeta = rho * eta
        l1, r1, l2, r2 = simon_sides(xi, zeta, p)
        ok = (r1 > 0) & (r2 > 0)
        C = max(C, float(np.max(l1[ok] / r1[ok])))
        Ct = max(Ct, float(np.max(l2[ok] / r2[ok])))
        done += k
    return C, Ct


def simon_check(p, sample_count, seed=0, dim=2, margin=0.01):
    """Empirical constants of the vector inequalities.

    Both inequalities are homogeneous, so ``xi`` is drawn on the unit sphere
    and ``zeta`` with log-uniform length in ``[1e-3, 1e3]``.  The verdict
    compares against constants calibrated on an independent stream.
    """
    from .rng import make_rng

    if not p > 1:
        raise InvalidParameters("p must exceed 1")
    C, Ct = _simon_constants(p, sample_count, make_rng(seed, 1), dim)
    Cc, Ctc = _simon_constants(p, sample_count, make_rng(seed, 2), dim)
    return SimonReport(p, sample_count, C, Ct, Cc, Ctc, margin)
