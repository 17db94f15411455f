"""Decay exponents, extinction, Sobolev/Nash constants and entropy inequalities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import splu

from .errors import InvalidParameters, InvalidRun, NotApplicable, UndefinedRatio
from .grid import GridFunction, gradient, norm_Lq_v, norm_LpQ, weighted_mass
from .report import AnalysisReport, CheckResult
from .rng import make_rng

SOBOLEV_STREAM = 7


def default_sigma(dim, p):
    """Classical Sobolev gain for ``Q = I, v = 1``: ``N/(N-p)`` if ``p < N`` else 2."""
    return dim / (dim - p) if p < dim else 2.0


@dataclass(frozen=True)
class DecayParameters:
    p: float
    q0: float
    sigma: float
    sigma_prime: float
    q_c: float
    beta: float
    gamma: float


def decay_parameters(p, q0, sigma):
    """Exponents of the ultracontractive bound ``|u(t)|_inf <= C |u0|_{q0}^gamma / t^beta``."""
    if not sigma > 1:
        raise InvalidParameters(f"sigma must exceed 1 (got {sigma})")
    if not q0 >= 1:
        raise InvalidParameters(f"q0 must be >= 1 (got {q0})")
    sp_ = sigma / (sigma - 1.0)
    q_c = sp_ * (2.0 - p)
    if not q0 > q_c:
        raise InvalidParameters(f"q0 must exceed q_c = sigma'(2-p) = {q_c:g} (got q0 = {q0})")
    den = sp_ * (p - 2.0) + q0
    return DecayParameters(p, q0, sigma, sp_, q_c, sp_ / den, q0 / den)


# -- ultracontractivity -------------------------------------------------------

@dataclass
class DecayFitReport:
    params: DecayParameters
    times: np.ndarray
    c: np.ndarray
    sup_c: float
    slope: float
    window: tuple
    reference_sups: list = dc_field(default_factory=list)
    tolerance: float = 0.2

    @property
    def bounded(self):
        return bool(np.isfinite(self.sup_c) and self.sup_c > 0)

    @property
    def max_relative_change(self):
        if not self.reference_sups:
            return 0.0
        return max(abs(s - self.sup_c) / self.sup_c for s in self.reference_sups)

    @property
    def passed(self):
        return self.bounded and self.max_relative_change <= self.tolerance


def ratio_series(traj, params, window=(0.05, 1.0)):
    """``(t, c(t))`` on partition times inside ``[window[0] T, window[1] T]``."""
    u0 = traj.u0
    denom = norm_Lq_v(u0, params.q0, traj.field) ** params.gamma
    if denom == 0:
        raise UndefinedRatio("initial datum is zero")
    t = traj.times
    keep = (t >= window[0] * traj.T * (1 - 1e-12)) & (t <= window[1] * traj.T * (1 + 1e-12)) & (t > 0)
    linf = np.array([norm_Lq_v(traj.snapshots[k], np.inf, traj.field) for k in np.flatnonzero(keep)])
    return t[keep], linf * t[keep] ** params.beta / denom, linf


def ultracontractive_check(traj, params, window=(0.05, 1.0), references=(), tolerance=0.2):
    """Empirical constant of the ultracontractive bound and its stability.

    ``references`` are runs of the same scenario under refinement (grid or
    step) or with scaled data; the verdict requires every reference's
    ``sup c`` within ``tolerance`` of this run's.
    """
    t, c, linf = ratio_series(traj, params, window)
    pos = linf > 0
    slope = float(np.polyfit(np.log(t[pos]), np.log(linf[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    refs = [float(ratio_series(r, params, window)[1].max()) for r in references]
    return DecayFitReport(params, t, c, float(c.max()), slope, tuple(window), refs, tolerance)


# -- extinction ---------------------------------------------------------------

@dataclass
class ExtinctionResult:
    t_ext: float | None
    eps_ext: float
    T0: float
    h: float
    m: float
    q_c: float
    branch: str
    slack: float = 0.0

    @property
    def passed(self):
        return self.t_ext is not None and self.t_ext <= self.T0 * (1 + self.slack)


def extinction_time_bound(p, sigma, M_p, u0, field, q0_fallback=1.5):
    """Upper bound on the extinction time; returns ``(T0, h, branch)``.

    For ``q_c = sigma'(2-p) > 1`` the ``L^{q_c}`` energy satisfies
    ``Y' <= -q_c (q_c-1) / (M_p^p h^p) Y^(1/sigma)`` with ``h = (q_c+p-2)/p``,
    which extinguishes at ``T0 = h^p sigma' M_p^p / (q_c (q_c-1)) |u0|_{q_c}^{q_c/sigma'}``.
    Otherwise ``q0 = q0_fallback`` in ``(1, 2)`` is used with
    ``Y' <= -c Y^a``, ``a = (q0+p-2)/q0`` and
    ``c = q0 (q0-1) / (M_p^p h0^p v(Omega)^((q0-q_c)/(q0 sigma')))``, giving
    ``T0 = Y(0)^(1-a) / (c (1-a))``.
    """
    if p >= 2:
        raise NotApplicable("finite-time extinction needs 1 < p < 2")
    sp_ = sigma / (sigma - 1.0)
    q_c = sp_ * (2.0 - p)
    if q_c > 1:
        h = (q_c + p - 2.0) / p
        y = norm_Lq_v(u0, q_c, field)
        T0 = h ** p * sp_ * M_p ** p / (q_c * (q_c - 1.0)) * y ** (q_c / sp_)
        return T0, h, "q_c>1"
    q0 = q0_fallback
    if not 1 < q0 < 2:
        raise InvalidParameters("fallback q0 must lie in (1, 2)")
    h0 = (q0 + p - 2.0) / p
    vol = weighted_mass(field)
    c = q0 * (q0 - 1.0) / (M_p ** p * h0 ** p * vol ** ((q0 - q_c) / (q0 * sp_)))
    a = (q0 + p - 2.0) / q0
    Y0 = norm_Lq_v(u0, q0, field) ** q0
    return Y0 ** (1 - a) / (c * (1 - a)), h0, f"fallback q0={q0}"


def extinction_analysis(traj, params, M_p, eps_ext=None, slack=None, q0_fallback=1.5):
    """First partition time after which ``|u|_inf < eps_ext`` versus the bound ``T0``.

    ``params`` is a :class:`DecayParameters` or just the Sobolev gain sigma.
    """
    if isinstance(params, DecayParameters):
        p, sigma = params.p, params.sigma
    else:  # bare sigma: extinction does not involve q0
        p, sigma = traj.p, float(params)
    if p >= 2:
        raise NotApplicable("finite-time extinction needs 1 < p < 2")
    if not M_p > 0:
        raise InvalidParameters("M_p must be positive")
    u0 = traj.u0
    linf = np.array([norm_Lq_v(u, np.inf, traj.field) for u in traj.snapshots])
    q_c = sigma / (sigma - 1.0) * (2.0 - p)
    m = max(2.0, q_c)
    slack = 10 * traj.cfg.gtol if slack is None else slack
    if linf[0] == 0:
        return ExtinctionResult(0.0, 0.0, 0.0, float("nan"), m, q_c, "zero datum", slack)
    eps = 1e-8 * linf[0] if eps_ext is None else eps_ext
    T0, h, branch = extinction_time_bound(p, sigma, M_p, u0, traj.field, q0_fallback)
    below = linf < eps
    t_ext = None
    if below[-1]:
        k = len(below) - 1
        while k > 0 and below[k - 1]:
            k -= 1
        t_ext = float(traj.times[k])
    return ExtinctionResult(t_ext, eps, T0, h, m, q_c, branch, slack)


# -- Sobolev constant ---------------------------------------------------------

@dataclass
class SobolevConfig:
    n_starts: int = 20
    max_iter: int = 300
    rtol: float = 1e-13
    modes: int = 6
    seed: int = 0


@dataclass
class SobolevEstimate:
    p: float
    sigma: float
    M_hat: float
    maximizer: GridFunction
    start_ratios: list
    iterations: list

    def reproduce(self, field):
        return sobolev_ratio(self.maximizer, self.p, self.sigma, field)


def sobolev_ratio(u, p, sigma, field):
    """``|u|_{L^{sigma p}_v} / |sqrt(Q) grad u|_p``."""
    den = norm_LpQ(gradient(u), p, field)
    if den == 0:
        raise UndefinedRatio("zero gradient")
    return norm_Lq_v(u, sigma * p, field) / den


def random_smooth(grid, rng, modes=6):
    """Random sine series with ``1/k`` decaying coefficients (zero on the boundary)."""
    c = rng.normal(size=(modes,) * grid.dim)
    k = np.indices(c.shape) + 1
    c /= np.sqrt(np.sum(k.astype(float) ** 2, axis=0))
    x = (grid.node_coords - np.asarray(grid.lower)) / (np.asarray(grid.upper) - np.asarray(grid.lower))
    basis = [np.sin(np.pi * np.outer(x[:, j], np.arange(1, modes + 1))) for j in range(grid.dim)]
    if grid.dim == 1:
        vals = basis[0] @ c
    elif grid.dim == 2:
        vals = np.einsum("na,nb,ab->n", basis[0], basis[1], c)
    else:
        vals = np.einsum("na,nb,nc,abc->n", basis[0], basis[1], basis[2], c)
    return GridFunction.from_callable(grid, lambda _: vals)


class _Rayleigh:
    """``log R(x)`` on interior unknowns, with gradient."""

    def __init__(self, field, p, sigma):
        grid = field.grid
        self.G = grid.interior_gradient_matrix
        self.Q = field.Q
        self.nc, self.N = grid.n_cells, grid.dim
        self.vol = grid.cell_volume
        self.m = (field.v_nodes * grid.node_volume)[grid.interior]
        self.p, self.r = p, sigma * p

    def terms(self, x):
        g = (self.G @ x).reshape(self.nc, self.N)
        Qg = np.einsum("cij,cj->ci", self.Q, g)
        s = np.maximum(np.einsum("ci,ci->c", g, Qg), 0.0)
        A = np.sum(self.m * np.abs(x) ** self.r)
        B = np.sum(s ** (self.p / 2)) * self.vol
        return Qg, s, A, B

    def value(self, A, B):
        return math.log(A) / self.r - math.log(B) / self.p

    def grad(self, x, Qg, s, A, B):
        ax = self.m * np.abs(x) ** (self.r - 2) * x if self.r != 2 else self.m * x
        with np.errstate(divide="ignore"):
            w = np.where(s > 0, s ** (self.p / 2 - 1), 0.0) if self.p < 2 else s ** (self.p / 2 - 1)
        return ax / A - self.G.T @ (self.vol * w[:, None] * Qg).ravel() / B, ax / A

    def preconditioner(self, s):
        smax = float(s.max())
        w = (s + 1e-12 * smax) ** (self.p / 2 - 1)
        from scipy import sparse as sp
        blocks = (self.vol * w)[:, None, None] * self.Q
        Bm = sp.bsr_matrix((blocks, np.arange(self.nc), np.arange(self.nc + 1)),
                           shape=(self.nc * self.N, self.nc * self.N))
        return splu((self.G.T @ (Bm.tocsr() @ self.G)).tocsc())


def _ascend(ray, x, cfg):
    Qg, s, A, B = ray.terms(x)
    J = ray.value(A, B)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        x = x / B ** (1 / ray.p)
        Qg, s, A, B = ray.terms(x)
        J = ray.value(A, B)
        grad, ax = ray.grad(x, Qg, s, A, B)
        lu = ray.preconditioner(s)
        # Kacanov-preconditioned direction; alpha = 1 is a nonlinear inverse iteration
        d = lu.solve(grad) * B
        alpha = 1.0
        improved = False
        for _ in range(40):
            xn = x + alpha * d
            _, _, An, Bn = ray.terms(xn)
            if An > 0 and Bn > 0:
                Jn = ray.value(An, Bn)
                if Jn > J:
                    improved = True
                    break
            alpha *= 0.5
        if not improved:
            break
        gain = Jn - J
        x = xn
        if gain <= cfg.rtol * max(1.0, abs(Jn)):
            break
    Qg, s, A, B = ray.terms(x)
    return x, it


def estimate_sobolev(grid, field, p, sigma, cfg=None, probes=()):
    """Largest discrete Sobolev ratio found by preconditioned ascent.

    Start ``i`` draws from stream ``(seed, SOBOLEV_STREAM, i)``, so enlarging
    ``n_starts`` only adds candidates.  ``probes`` are extra functions whose
    ratios are included as is.  ``sigma = 1`` (no gain, Poincare) is accepted.
    """
    cfg = SobolevConfig() if cfg is None else cfg
    if not sigma >= 1:
        raise InvalidParameters("sigma must be >= 1")
    if not p > 1:
        raise InvalidParameters("p must exceed 1")
    ray = _Rayleigh(field, p, sigma)
    best, best_u = -np.inf, None
    ratios, iters = [], []
    for i in range(cfg.n_starts):
        u = random_smooth(grid, make_rng(cfg.seed, SOBOLEV_STREAM, i), cfg.modes)
        x, its = _ascend(ray, u.interior_values, cfg)
        cand = GridFunction.from_interior(grid, x / np.max(np.abs(x)))
        r = sobolev_ratio(cand, p, sigma, field)
        ratios.append(r)
        iters.append(its)
        if r > best:
            best, best_u = r, cand
    for u in probes:
        r = sobolev_ratio(u, p, sigma, field)
        ratios.append(r)
        if r > best:
            best, best_u = r, u
    if best_u is None:
        raise InvalidParameters("no starts and no probes")
    return SobolevEstimate(p, sigma, float(best), best_u, ratios, iters)


# -- Nash ---------------------------------------------------------------------

def nash_exponents(p, q0, sigma):
    den = 2 * sigma * p - 2 * q0
    return sigma * p * (2 - q0) / den, (sigma * q0 * (p - 2) + 2 * (sigma - 1) * q0) / den


def nash_check(u, q0, sigma, p, field):
    """``|u|_2 / (|grad u|_{L^p_Q}^a |u|_{q0}^b)`` with the Nash exponents ``(a, b)``."""
    if not 1 <= q0 < 2:
        raise InvalidParameters("q0 must lie in [1, 2)")
    num = norm_Lq_v(u, 2, field)
    if num == 0:
        raise UndefinedRatio("u = 0")
    a, b = nash_exponents(p, q0, sigma)
    return num / (norm_LpQ(gradient(u), p, field) ** a * norm_Lq_v(u, q0, field) ** b)


def nash_constant_from_sobolev(M_p, p, q0, sigma):
    """Nash constant implied by the Sobolev inequality through Hoelder interpolation.

    The first Nash exponent equals the interpolation weight ``theta`` in
    ``|u|_2 <= |u|_{sigma p}^theta |u|_{q0}^(1-theta)`` (valid when
    ``sigma p >= 2``), so the constant is ``M_p^theta``.
    """
    if sigma * p < 2:
        raise NotApplicable("interpolation needs sigma p >= 2")
    return M_p ** nash_exponents(p, q0, sigma)[0]


# -- entropy / log-Sobolev ----------------------------------------------------

def _nodal(f):
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def entropy_J(f, h, field):
    """Weighted Young functional ``int |f|^h/|f|_h^h log(|f|/|f|_h) dv``."""
    if not h >= 1:
        raise InvalidParameters("h must be >= 1")
    vals = np.abs(_nodal(f))
    nrm = norm_Lq_v(vals, h, field)
    if nrm == 0:
        raise UndefinedRatio("f = 0")
    y = vals / nrm
    w = field.v_nodes * field.grid.node_volume
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y ** h * np.log(y), 0.0)
    return float(np.sum(term * w))


def log_sobolev_gap(f, r, eps, sigma, M_p, p, field):
    """Left minus right side of the logarithmic Sobolev inequality (<= 0 when it holds)."""
    if not 1 <= r < sigma * p:
        raise InvalidParameters(f"r must lie in [1, sigma p) = [1, {sigma * p:g})")
    if not eps > 0:
        raise InvalidParameters("eps must be positive")
    lhs = entropy_J(f, r, field)
    nr = norm_Lq_v(f, r, field)
    g = norm_LpQ(gradient(f), p, field)
    rhs = sigma / (sigma * p - r) * (eps * M_p ** p * g ** p / nr ** p - math.log(eps))
    return lhs - rhs


# -- L^r dissipation ----------------------------------------------------------

@dataclass
class SeriesReport:
    name: str
    lhs: np.ndarray
    rhs: np.ndarray
    slack: np.ndarray

    @property
    def margins(self):
        return self.lhs - self.rhs

    @property
    def passed(self):
        return bool(np.all(self.lhs <= self.rhs + self.slack))


def lr_dissipation_check(traj, r, field=None, slack_factor=10.0):
    """Per-step form of ``d/dt |u|_r^r <= -r(r-1)(p/(r+p-2))^p int |sqrt(Q) grad u^b|^p``.

    ``b = (r+p-2)/p``; requires a nonnegative run (see ``u0.positive_part()``).
    """
    field = traj.field if field is None else field
    if not r >= 1:
        raise InvalidParameters("r must be >= 1")
    p, tau = traj.p, traj.tau
    u0max = norm_Lq_v(traj.u0, np.inf, field)
    neg_tol = slack_factor * traj.cfg.gtol * max(u0max, np.finfo(float).tiny)
    for k, u in enumerate(traj.snapshots):
        if u.values.min() < -neg_tol:
            raise InvalidRun(f"snapshot {k} has negative values ({u.values.min():.3e})")
    snaps = [np.maximum(u.values, 0.0) for u in traj.snapshots]
    b = (r + p - 2.0) / p
    coef = r * (r - 1.0) * (p / (r + p - 2.0)) ** p if r > 1 else 0.0
    nr = np.array([norm_Lq_v(s, r, field) ** r for s in snaps])
    lhs = np.diff(nr) / tau
    rhs = np.array([-coef * norm_LpQ(gradient(GridFunction(traj.grid, s ** b)), p, field) ** p
                    if coef else 0.0 for s in snaps[1:]])
    slack = slack_factor * traj.cfg.gtol * r * np.maximum(nr[:-1], np.finfo(float).tiny) / tau
    return SeriesReport(f"lr_dissipation_r{r:g}", lhs, rhs, slack)


# -- summary helpers ----------------------------------------------------------

def analysis_checks(*results):
    """Turn analysis results into :class:`CheckResult` entries."""
    rep = AnalysisReport("analysis")
    for res in results:
        if isinstance(res, DecayFitReport):
            rep.add(CheckResult("ultracontractive_bound", res.passed, res.sup_c, float("nan"),
                                res.tolerance, f"sup c(t); refs={res.reference_sups}; slope={res.slope:.4g}"))
        elif isinstance(res, ExtinctionResult):
            rep.add(CheckResult("finite_time_extinction", res.passed,
                                float("inf") if res.t_ext is None else res.t_ext, res.T0, res.slack,
                                f"eps_ext={res.eps_ext:.3g} branch={res.branch}"))
        elif isinstance(res, SeriesReport):
            rep.add(CheckResult(res.name, res.passed, float(np.max(res.margins - res.slack, initial=-np.inf)),
                                0.0, float(np.max(res.slack, initial=0.0)), "max(lhs - rhs - slack) per step"))
    return rep
