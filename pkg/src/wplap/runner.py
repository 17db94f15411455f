"""Execute a :class:`~wplap.scenario.Scenario` and write its artifacts."""
from __future__ import annotations

import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as an
from .errors import NonConvergence, NumericalBreakdown, WplapError
from .evolution import compare, evolve, refine_until_cauchy, trajectory_checks
from .grid import Grid, GridFunction, norm_Lq_v, read_snapshot, write_snapshot
from .oracles import heat_continuum, heat_recurrence, sine_product
from .report import AnalysisReport, CheckResult, write_csv, write_series
from .rng import make_rng
from .weights import WeightFamilySpec, build_field, check_hypothesis, random_field

log = logging.getLogger(__name__)

# stream ids under the scenario seed
INITIAL_STREAM, WEIGHT_STREAM, PARTNER_STREAM, NASH_STREAM, LOGSOB_STREAM = 1, 2, 3, 4, 5

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


def make_grid(scn, refine=0):
    nodes = tuple((n - 1) * 2 ** refine + 1 for n in scn.nodes)
    return Grid(scn.lower, scn.upper, nodes)


def make_field(scn, grid):
    w = dict(scn.weights)
    family = w.pop("family")
    if family == "random":
        return random_field(grid, make_rng(scn.seed, WEIGHT_STREAM),
                            contrast=w.get("contrast", 4.0), isotropic=w.get("isotropic", False))
    return build_field(WeightFamilySpec(family, w), grid)


def make_initial(scn, grid):
    ini = scn.initial
    amp = ini["amplitude"]
    kind = ini["kind"]
    if kind == "zero":
        u = grid.zeros()
    elif kind == "sine-product":
        u = sine_product(grid, ini["modes"], amp)
    elif kind == "bump":
        lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
        c = 0.5 * (lo + hi) if ini["center"] is None else np.broadcast_to(ini["center"], (grid.dim,))
        rad = ini["radius"]

        def bump(x):
            r2 = np.sum((x - c) ** 2, axis=1) / rad ** 2
            with np.errstate(divide="ignore", over="ignore"):
                return np.where(r2 < 1, amp * np.exp(1 - 1 / np.maximum(1 - r2, 1e-300)), 0.0)
        u = GridFunction.from_callable(grid, bump)
    elif kind == "random-smooth":
        u = an.random_smooth(grid, make_rng(scn.seed, INITIAL_STREAM), ini["modes"])
        u = u * amp
    else:
        u, _ = read_snapshot(ini["path"])
        if u.grid != grid:
            raise WplapError("initial datum file lives on a different grid")
    return u.positive_part() if ini["positive"] else u


def _evolve(scn, u0, field, n=None):
    if n is None and scn.n is None:
        tol = scn.refine_tol * max(norm_Lq_v(u0, 2, field), np.finfo(float).tiny)
        traj, conv = refine_until_cauchy(u0, scn.T, scn.p, field, scn.solver, tol, scn.n0, scn.n_max)
        return traj, conv
    return evolve(u0, scn.T, n or scn.n, scn.p, field, scn.solver), None


def corrupt(traj):
    """Copy of ``traj`` with the last snapshot inflated (violates contraction)."""
    snaps = list(traj.snapshots)
    snaps[-1] = GridFunction(traj.grid, snaps[-1].values * 1.5 + 0.5 * snaps[0].values)
    return replace(traj, snapshots=snaps)


class _Run:
    def __init__(self, scn, out, strict=False, corrupted=False):
        self.scn = scn
        self.out = Path(out)
        self.slack_factor = 1.0 if strict else scn.slack_factor
        self.corrupted = corrupted
        self.report = AnalysisReport(f"wplap run: {scn.name}")
        self._sobolev = None

    def sobolev(self):
        if self._sobolev is None:
            cfg = an.SobolevConfig(n_starts=self.scn.sobolev_starts, seed=self.scn.seed)
            self._sobolev = an.estimate_sobolev(self.grid, self.field, self.scn.p, self.scn.sigma, cfg)
        return self._sobolev

    def execute(self):
        scn = self.scn
        self.out.mkdir(parents=True, exist_ok=True)
        self.report.info.update({k: v for k, v in scn.echo().items()})
        self.report.info["effective_slack_factor"] = self.slack_factor
        self.grid = make_grid(scn)
        self.field = make_field(scn, self.grid)
        self.u0 = make_initial(scn, self.grid)
        traj, conv = _evolve(scn, self.u0, self.field)
        if self.corrupted:
            traj = corrupt(traj)
            self.report.info["corrupted"] = True
        self.traj = traj
        if conv is not None:
            self.report.info["n"] = traj.n
            write_csv(self.out / "refinement.csv", ["n", "distance"],
                      [(int(a), float(b)) for a, b in zip(conv.ns, conv.distances)])
            self.report.add(CheckResult("refinement_cauchy", conv.converged,
                                        conv.distances[-1] if conv.distances else float("nan"),
                                        conv.tol, 0.0, "last consecutive-doubling distance"))
        traj.write_csv(self.out / "observables.csv")
        obs = traj.observables()
        write_series(self.out / "plot_Linf.csv", obs["t"], obs["Linf"], "t", "Linf")
        write_series(self.out / "plot_Dp.csv", obs["t"], obs["Dp"], "t", "Dp")
        self._snapshots()
        for check in scn.checks:
            getattr(self, f"check_{check}")()
        self.report.write(self.out / "report.txt")
        return self.report

    def _snapshots(self):
        if not self.scn.snapshots:
            return
        d = self.out / "snapshots"
        d.mkdir(exist_ok=True)
        for i, t in enumerate(self.scn.snapshots):
            k = min(int(round(t / self.traj.tau)), self.traj.n)
            write_snapshot(d / f"snapshot_{i:03d}.txt", self.traj.snapshots[k], float(self.traj.times[k]))

    # -- checks -----------------------------------------------------------

    def check_apriori(self):
        self.report.add(trajectory_checks(self.traj, self.slack_factor).checks)

    def check_comparison(self):
        scn, traj = self.scn, self.traj
        r = an.random_smooth(self.grid, make_rng(scn.seed, PARTNER_STREAM))
        scale = norm_Lq_v(self.u0, np.inf, self.field) or 1.0
        r = r * (scale / max(norm_Lq_v(r, np.inf, self.field), 1e-300))
        pairs = {"ordered": GridFunction(self.grid, self.u0.values - np.abs(r.values)),
                 "unordered": r}
        for label, u2 in pairs.items():
            other = evolve(u2, scn.T, traj.n, scn.p, self.field, scn.solver)
            series = compare(traj, other, self.slack_factor)
            inc = float(np.max(np.diff(series.s), initial=0.0))
            self.report.add(CheckResult(f"comparison_{label}", series.passed, inc, 0.0, series.slack,
                                        "max increase of int (u1-u2)^+ dv"))
            write_series(self.out / f"plot_comparison_{label}.csv", traj.times, series.s, "t", "s")

    def check_heat_oracle(self):
        scn, traj = self.scn, self.traj
        q = scn.weights.get("q", 1.0)
        v = scn.weights.get("v", 1.0)
        amp, modes = scn.initial["amplitude"], scn.initial["modes"]
        ref = heat_recurrence(self.grid, modes, traj.tau, traj.n, q, v, amp)
        nrm = norm_Lq_v(self.u0, 2, self.field) or 1.0
        err = max(norm_Lq_v(a.values - b.values, 2, self.field) for a, b in zip(traj.snapshots, ref)) / nrm
        tol = 1e-8
        self.report.add(CheckResult("heat_spectral_oracle", err <= tol, err, tol, 0.0,
                                    "sup_k relative L2_v error vs exact discrete recurrence"))
        cont = heat_continuum(self.grid, modes, traj.times, q, v, amp)
        cerr = max(norm_Lq_v(a.values - b.values, 2, self.field) for a, b in zip(traj.snapshots, cont))
        self.report.info["heat_continuum_error"] = cerr / nrm

    def check_sobolev(self):
        est = self.sobolev()
        rep = est.reproduce(self.field)
        rel = abs(rep - est.M_hat) / est.M_hat
        self.report.info["sobolev_M_hat"] = est.M_hat
        self.report.add(CheckResult("sobolev_estimate", rel <= 1e-8 and est.M_hat > 0, est.M_hat,
                                    float("nan"), 0.0, f"maximizer reproduces the ratio (rel {rel:.2e})"))
        write_csv(self.out / "sobolev_starts.csv", ["start", "ratio"],
                  [(i, float(r)) for i, r in enumerate(est.start_ratios)])

    def check_ultracontractive(self):
        scn, traj = self.scn, self.traj
        params = an.decay_parameters(scn.p, scn.q0, scn.sigma)
        refs, labels = [], []
        if scn.weights["family"] != "random" and scn.initial["kind"] != "file":
            g2 = make_grid(scn, refine=1)
            f2 = make_field(scn, g2)
            refs.append(evolve(make_initial(scn, g2), scn.T, traj.n, scn.p, f2, scn.solver))
            labels.append("grid")
        refs.append(evolve(self.u0, scn.T, 2 * traj.n, scn.p, self.field, scn.solver))
        labels.append("step")
        refs.append(evolve(self.u0 * 2.0, scn.T, traj.n, scn.p, self.field, scn.solver))
        labels.append("data x2")
        rep = an.ultracontractive_check(traj, params, scn.window, refs)
        t, c, _ = an.ratio_series(traj, params, scn.window)
        write_series(self.out / "plot_c.csv", t, c, "t", "c")
        self.report.info.update({"beta": params.beta, "gamma": params.gamma, "decay_slope": rep.slope})
        self.report.add(CheckResult("ultracontractive_bound", rep.passed, rep.max_relative_change,
                                    rep.tolerance, 0.0,
                                    f"sup c = {rep.sup_c:.6g}; refs ({', '.join(labels)}) = "
                                    + ", ".join(f"{s:.6g}" for s in rep.reference_sups)))

    def check_extinction(self):
        scn = self.scn
        M = self.sobolev().M_hat * scn.sobolev_inflation
        res = an.extinction_analysis(self.traj, scn.sigma, M, scn.eps_ext,
                                     slack=self.slack_factor * scn.solver.gtol)
        self.report.info.update({"extinction_T0": res.T0, "extinction_t_ext": res.t_ext,
                                 "extinction_branch": res.branch})
        self.report.add(CheckResult("finite_time_extinction", res.passed,
                                    math.inf if res.t_ext is None else res.t_ext, res.T0, res.slack,
                                    f"eps_ext = {res.eps_ext:.3g}, M_p = {M:.6g}"))

    def check_nash(self):
        scn = self.scn
        ratios = [an.nash_check(an.random_smooth(self.grid, make_rng(scn.seed, NASH_STREAM, i)),
                                scn.q0, scn.sigma, scn.p, self.field) for i in range(scn.probes)]
        sup = max(ratios)
        bound = math.inf
        if scn.sigma * scn.p >= 2:
            M = self.sobolev().M_hat * scn.sobolev_inflation
            bound = an.nash_constant_from_sobolev(M, scn.p, scn.q0, scn.sigma)
        self.report.add(CheckResult("nash_ratio", bool(np.isfinite(sup) and sup <= bound), sup, bound,
                                    0.0, f"sup over {scn.probes} probes vs Hoelder bound M^a"))

    def check_log_sobolev(self):
        scn = self.scn
        M = self.sobolev().M_hat * 1.05
        gaps = []
        for i in range(scn.probes):
            rng = make_rng(scn.seed, LOGSOB_STREAM, i)
            f = an.random_smooth(self.grid, rng)
            r = rng.uniform(1.0, scn.sigma * scn.p)
            eps = math.exp(rng.uniform(math.log(1e-3), math.log(1e3)))
            gaps.append(an.log_sobolev_gap(f, r, eps, scn.sigma, M, scn.p, self.field))
        worst = max(gaps)
        self.report.add(CheckResult("log_sobolev_gap", worst <= 0, worst, 0.0, 0.0,
                                    f"max gap over {scn.probes} random (f, r, eps)"))

    def check_lr_dissipation(self):
        scn, traj = self.scn, self.traj
        if np.all(self.u0.values >= 0):
            pos = traj
        else:
            pos = evolve(self.u0.positive_part(), scn.T, traj.n, scn.p, self.field, scn.solver)
        for r in scn.r_list:
            rep = an.lr_dissipation_check(pos, r, self.field, self.slack_factor)
            worst = float(np.max(rep.margins - rep.slack, initial=-np.inf))
            self.report.add(CheckResult(rep.name, rep.passed, worst, 0.0, float(np.max(rep.slack, initial=0)),
                                        "max(lhs - rhs - slack) over steps"))
            write_csv(self.out / f"plot_lr_r{r:g}.csv", ["t", "lhs", "rhs"],
                      [(float(t), float(a), float(b)) for t, a, b in zip(pos.times[1:], rep.lhs, rep.rhs)])

    def check_hypothesis(self):
        rep = check_hypothesis(self.field, self.scn.p, rng=make_rng(self.scn.seed, 6))
        self.report.add(CheckResult("weight_hypotheses", rep.passed, note="; ".join(rep.lines())))


def run_scenario(scn, out, strict=False, corrupted=False):
    """Run ``scn`` writing into ``out``; returns ``(exit_code, report)``."""
    job = _Run(scn, out, strict, corrupted)
    try:
        rep = job.execute()
    except WplapError as exc:
        code = EXIT_SOLVER if isinstance(exc, (NonConvergence, NumericalBreakdown)) else EXIT_FAILED
        job.report.info["error"] = f"{type(exc).__name__}: {exc}"
        Path(out).mkdir(parents=True, exist_ok=True)
        job.report.add(CheckResult("run_completed", False, note=str(exc)))
        job.report.write(Path(out) / "report.txt")
        log.error("run failed: %s (see %s)", exc, Path(out) / "report.txt")
        return code, job.report
    return (EXIT_OK if rep.passed else EXIT_FAILED), rep
