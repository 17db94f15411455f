"""Implicit Euler time march, time interpolation and trajectory-level checks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import IncompatibleTrajectories, InvalidParameters, NonConvergence, OutOfRange
from .grid import GridFunction, dirichlet_energy, norm_Lq_v, norm_LpQ, gradient
from .prox import InnerSolverConfig, ProxProblem, solve_prox
from .report import AnalysisReport, CheckResult, write_csv

log = logging.getLogger(__name__)

OBSERVABLE_NORMS = {"L1": 1, "L2": 2, "L4": 4, "Linf": np.inf}


@dataclass
class Trajectory:
    """Snapshots ``u_{n,k}`` at ``t_k = k T / n`` plus observables."""

    field: object
    p: float
    T: float
    n: int
    tau: float
    snapshots: list
    diagnostics: list = dc_field(default_factory=list)
    cfg: InnerSolverConfig = dc_field(default_factory=InnerSolverConfig)

    @property
    def grid(self):
        return self.field.grid

    @property
    def times(self):
        return np.arange(self.n + 1) * self.tau

    @property
    def u0(self):
        return self.snapshots[0]

    def observable(self, name):
        if name == "Dp":
            return np.array([dirichlet_energy(u, self.p, self.field) for u in self.snapshots])
        q = OBSERVABLE_NORMS[name]
        return np.array([norm_Lq_v(u, q, self.field) for u in self.snapshots])

    def observables(self):
        out = {"t": self.times, "Dp": self.observable("Dp")}
        for name in OBSERVABLE_NORMS:
            out[name] = self.observable(name)
        return out

    def write_csv(self, path):
        obs = self.observables()
        diag = [{"iterations": 0, "residual": 0.0, "delta_stages": 0}] + self.diagnostics
        cols = ["t", "Dp", "L1", "L2", "L4", "Linf", "iterations", "residual", "delta_stages"]
        rows = []
        for k in range(self.n + 1):
            rows.append([float(obs[c][k]) for c in cols[:6]]
                        + [int(diag[k]["iterations"]), float(diag[k]["residual"]),
                           int(diag[k]["delta_stages"])])
        write_csv(path, cols, rows)


def march(u0, tau, n, p, field, cfg=None):
    """``n`` implicit Euler steps of size ``tau``; returns ``(snapshots, diagnostics)``."""
    cfg = InnerSolverConfig() if cfg is None else cfg
    snaps = [u0]
    diags = []
    u = u0
    for k in range(1, n + 1):
        try:
            res = solve_prox(ProxProblem(u, tau, p, field), cfg)
        except NonConvergence as exc:
            exc.step = k
            raise NonConvergence(f"step {k}: {exc}", residual=exc.residual, step=k) from exc
        u = res.u
        snaps.append(u)
        diags.append({"iterations": res.iterations, "residual": res.residual,
                      "delta_stages": len(res.stages), "max_energy_change": res.max_energy_change})
        log.debug("time step", extra={"step": k, **diags[-1]})
    return snaps, diags


def evolve(u0, T, n, p, field, cfg=None):
    """ε-approximate solution with ``n`` uniform steps on ``[0, T]``."""
    if n < 1 or not T > 0:
        raise InvalidParameters("need n >= 1 and T > 0")
    cfg = InnerSolverConfig() if cfg is None else cfg
    tau = T / n
    snaps, diags = march(u0, tau, n, p, field, cfg)
    return Trajectory(field, p, T, n, tau, snaps, diags, cfg)


def _step_index(traj, t):
    if not (-1e-12 * traj.T <= t <= traj.T * (1 + 1e-12)):
        raise OutOfRange(f"t={t} outside [0, {traj.T}]")
    r = t / traj.tau
    k = round(r)
    if abs(r - k) <= 1e-9 * max(1.0, abs(r)):
        return int(k), 0.0
    return int(math.ceil(r)), r - math.floor(r)


def evaluate(traj, t):
    """Piecewise-constant value: ``u_0`` at 0, ``u_{n,k}`` on ``(t_{k-1}, t_k]``."""
    k, _ = _step_index(traj, t)
    return traj.snapshots[min(k, traj.n)]


@dataclass
class Interpolant:
    """Linear-in-time interpolant through the snapshots of ``traj``."""

    traj: Trajectory

    def __call__(self, t):
        return evaluate_interpolant(self, t)


def evaluate_interpolant(interp, t):
    traj = interp.traj
    k, frac = _step_index(traj, t)
    if frac == 0.0:
        return traj.snapshots[min(k, traj.n)]
    a, b = traj.snapshots[k - 1], traj.snapshots[k]
    return GridFunction(traj.grid, a.values + frac * (b.values - a.values))


# -- refinement ---------------------------------------------------------------

@dataclass
class ConvergenceReport:
    ns: list
    distances: list
    tol: float
    converged: bool

    @property
    def ratios(self):
        d = self.distances
        return [d[i + 1] / d[i] if d[i] > 0 else float("nan") for i in range(len(d) - 1)]


def coarse_distance(coarse, fine):
    """``max_k ||u_n(t_k) - u_{2n}(t_k)||_{L^2_v}`` over the coarse partition."""
    if fine.n != 2 * coarse.n:
        raise IncompatibleTrajectories("fine trajectory must have twice the steps")
    return max(norm_Lq_v(coarse.snapshots[k].values - fine.snapshots[2 * k].values, 2, coarse.field)
               for k in range(coarse.n + 1))


def refine_until_cauchy(u0, T, p, field, cfg=None, tol=1e-4, n0=8, n_max=256):
    """Double ``n`` from ``n0`` until consecutive trajectories are ``tol``-close.

    ``n_max`` caps the finest step count.  Returns the finest trajectory and
    the list of consecutive distances.
    """
    if not tol > 0:
        raise InvalidParameters("tol must be positive")
    coarse = evolve(u0, T, n0, p, field, cfg)
    ns, dists = [], []
    while 2 * coarse.n <= n_max:
        fine = evolve(u0, T, 2 * coarse.n, p, field, cfg)
        d = coarse_distance(coarse, fine)
        ns.append(coarse.n)
        dists.append(d)
        coarse = fine
        if d <= tol:
            return coarse, ConvergenceReport(ns, dists, tol, True)
    return coarse, ConvergenceReport(ns, dists, tol, False)


# -- a-priori checks ----------------------------------------------------------

def slack_for(traj, scale, factor=10.0):
    return factor * traj.cfg.gtol * scale


def trajectory_checks(traj, slack_factor=10.0, apriori_rel=1e-6):
    """Contraction, energy decrease and the a-priori gradient bound."""
    rep = AnalysisReport("a-priori checks")
    for name, q in OBSERVABLE_NORMS.items():
        vals = traj.observable(name)
        inc = float(np.max(np.diff(vals))) if traj.n else 0.0
        sl = slack_for(traj, vals[0], slack_factor)
        rep.add(CheckResult(f"contraction_{name}", inc <= sl, inc, 0.0, sl,
                            "max increase of the norm between steps"))
    dp = traj.observable("Dp")
    inc = float(np.max(np.diff(dp))) if traj.n else 0.0
    sl = slack_for(traj, dp[0], slack_factor)
    rep.add(CheckResult("energy_decrease", inc <= sl, inc, 0.0, sl, "max increase of D_p"))

    l2 = traj.observable("L2")
    grad_p = np.array([norm_LpQ(gradient(u), traj.p, traj.field) ** traj.p for u in traj.snapshots])
    lhs = float(traj.tau * np.sum(grad_p[1:]))
    bound = 0.5 * l2[0] ** 2
    rep.add(CheckResult("apriori_gradient_bound", lhs <= bound * (1 + apriori_rel), lhs, bound,
                        bound * apriori_rel, "sum_k tau |sqrt(Q) grad u_k|_p^p <= |u0|^2/2"))
    per_step = traj.tau * grad_p[1:] - 0.5 * (l2[:-1] ** 2 - l2[1:] ** 2)
    worst = float(per_step.max()) if traj.n else 0.0
    sl = slack_for(traj, l2[0] ** 2, slack_factor)
    rep.add(CheckResult("per_step_energy_identity", worst <= sl, worst, 0.0, sl,
                        "tau |grad u_k|^p - (|u_{k-1}|^2 - |u_k|^2)/2"))
    return rep


@dataclass
class ComparisonSeries:
    s: np.ndarray
    slack: float

    @property
    def passed(self):
        s = self.s
        return bool(np.all(s <= s[0] + self.slack) and np.all(np.diff(s) <= self.slack))


def positive_mass(a, b, field):
    d = np.maximum(a.values - b.values, 0.0)
    return float(np.sum(d * field.v_nodes * field.grid.node_volume))


def compare(traj1, traj2, slack_factor=10.0):
    """Series ``s_k = sum (u1_k - u2_k)^+ v dV`` and its monotonicity verdict."""
    f1, f2 = traj1.field, traj2.field
    same_field = f1 is f2 or (np.array_equal(f1.Q, f2.Q) and np.array_equal(f1.v_nodes, f2.v_nodes))
    if (traj1.grid != traj2.grid or not same_field or traj1.p != traj2.p
            or traj1.n != traj2.n or traj1.tau != traj2.tau):
        raise IncompatibleTrajectories("trajectories differ in grid, weights, p or partition")
    s = np.array([positive_mass(a, b, traj1.field) for a, b in zip(traj1.snapshots, traj2.snapshots)])
    scale = norm_Lq_v(traj1.u0, 1, traj1.field) + norm_Lq_v(traj2.u0, 1, traj1.field)
    return ComparisonSeries(s, slack_for(traj1, scale, slack_factor))
