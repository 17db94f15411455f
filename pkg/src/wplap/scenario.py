"""Scenario files: sectioned ``key = value`` text parsed with :mod:`configparser`.

Grammar (all sections optional except ``[grid]`` and ``[evolution]``)::

    [scenario]   name, seed
    [grid]       dim, nodes, lower, upper
    [weights]    family = identity | isotropic-power | anisotropic-diagonal
                          | grid-file | random, plus family parameters
    [initial]    kind = sine-product | bump | random-smooth | file | zero,
                 amplitude, modes, center, radius, path, positive
    [evolution]  p, T, and either n or refine_tol (relative to |u0|_{L^2_v};
                 with n0, n_max);
                 snapshots = comma separated times
    [solver]     any field of InnerSolverConfig
    [analysis]   checks (comma list), sigma, q0, eps_ext, r_list, window,
                 sobolev_starts, sobolev_inflation, probes, slack_factor

Lists are comma separated.  Unknown keys and sections are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .analysis import default_sigma
from .errors import ParseError
from .prox import InnerSolverConfig

CHECKS = ("apriori", "comparison", "heat_oracle", "ultracontractive", "extinction",
          "sobolev", "nash", "log_sobolev", "lr_dissipation", "hypothesis")
INITIAL_KINDS = ("sine-product", "bump", "random-smooth", "file", "zero")
WEIGHT_KEYS = {
    "identity": {"q", "v"},
    "isotropic-power": {"alpha", "kappa", "scale"},
    "anisotropic-diagonal": {"exponents", "envelope_p", "v_min"},
    "grid-file": {"path"},
    "random": {"contrast", "isotropic"},
}
SECTIONS = {
    "scenario": {"name", "seed"},
    "grid": {"dim", "nodes", "lower", "upper"},
    "weights": {"family"} | set().union(*WEIGHT_KEYS.values()),
    "initial": {"kind", "amplitude", "modes", "center", "radius", "path", "positive"},
    "evolution": {"p", "t", "n", "refine_tol", "n0", "n_max", "snapshots"},
    "solver": {f.name for f in dataclasses.fields(InnerSolverConfig)},
    "analysis": {"checks", "sigma", "q0", "eps_ext", "r_list", "window", "sobolev_starts",
                 "sobolev_inflation", "probes", "slack_factor"},
}


@dataclass
class Scenario:
    name: str
    seed: int
    dim: int
    nodes: tuple
    lower: tuple
    upper: tuple
    weights: dict
    initial: dict
    p: float
    T: float
    n: int | None
    refine_tol: float | None
    n0: int
    n_max: int
    snapshots: tuple
    solver: InnerSolverConfig
    checks: tuple
    sigma: float
    q0: float | None
    eps_ext: float | None
    r_list: tuple
    window: tuple
    sobolev_starts: int
    sobolev_inflation: float
    probes: int
    slack_factor: float
    source: str = ""
    base_dir: Path = dc_field(default_factory=Path)

    def echo(self):
        """Flat ``key -> value`` view of every setting, defaults included."""
        out = {}
        for f in dataclasses.fields(self):
            if f.name in ("source", "base_dir"):
                continue
            val = getattr(self, f.name)
            if isinstance(val, InnerSolverConfig):
                for g in dataclasses.fields(val):
                    out[f"solver.{g.name}"] = getattr(val, g.name)
            elif isinstance(val, dict):
                for k, v in val.items():
                    out[f"{f.name}.{k}"] = v
            else:
                out[f.name] = val
        return out


class _Reader:
    def __init__(self, cp, path):
        self.cp = cp
        self.path = path
        self.lines = {}
        text = Path(path).read_text().splitlines()
        section = None
        for i, raw in enumerate(text, 1):
            s = raw.strip()
            if s.startswith("[") and s.endswith("]"):
                section = s[1:-1].strip().lower()
                self.lines[(section, None)] = i
            elif section and "=" in s and not s.startswith(("#", ";")):
                self.lines[(section, s.split("=", 1)[0].strip().lower())] = i

    def line(self, section, key=None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def fail(self, msg, section, key=None):
        raise ParseError(f"{self.path}: {msg}", line=self.line(section, key), key=key or section)

    def has(self, section, key):
        return self.cp.has_option(section, key)

    def get(self, section, key, conv=str, default=None, required=False):
        if not self.has(section, key):
            if required:
                self.fail(f"missing required key '{key}' in [{section}]", section, key)
            return default
        raw = self.cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            self.fail(f"bad value for '{key}': {raw!r} ({exc})", section, key)

    def require(self, cond, msg, section, key):
        if not cond:
            self.fail(msg, section, key)


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _names(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def parse_scenario(path, seed=None):
    """Read and validate a scenario file; ``seed`` overrides the file's seed."""
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(path.read_text(), source=str(path))
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file", line=None, key=None)
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}", line=getattr(exc, "lineno", None), key=None)
    rd = _Reader(cp, path)

    for sec in cp.sections():
        if sec not in SECTIONS:
            rd.fail(f"unknown section [{sec}]", sec)
        for key in cp.options(sec):
            if key not in SECTIONS[sec]:
                rd.fail(f"unknown key '{key}' in [{sec}]", sec, key)
    for sec in ("grid", "evolution"):
        if not cp.has_section(sec):
            raise ParseError(f"{path}: missing section [{sec}]", line=None, key=sec)

    name = rd.get("scenario", "name", default=path.stem)
    file_seed = rd.get("scenario", "seed", int, 0)
    seed = file_seed if seed is None else int(seed)

    dim = rd.get("grid", "dim", int, required=True)
    rd.require(dim in (1, 2, 3), "dim must be 1, 2 or 3", "grid", "dim")
    nodes = rd.get("grid", "nodes", _ints, required=True)
    lower = rd.get("grid", "lower", _floats, (0.0,))
    upper = rd.get("grid", "upper", _floats, (1.0,))
    bc = lambda t, key: tuple(np.broadcast_to(np.asarray(t), (dim,)).tolist()) if len(t) in (1, dim) \
        else rd.fail(f"'{key}' needs 1 or {dim} entries", "grid", key)
    nodes, lower, upper = bc(nodes, "nodes"), bc(lower, "lower"), bc(upper, "upper")
    rd.require(min(nodes) >= 3, "nodes must be >= 3 per axis", "grid", "nodes")
    rd.require(all(b > a for a, b in zip(lower, upper)), "upper must exceed lower", "grid", "upper")

    family = rd.get("weights", "family", default="identity")
    rd.require(family in WEIGHT_KEYS, f"unknown weight family '{family}'", "weights", "family")
    weights = {"family": family}
    for key in cp.options("weights") if cp.has_section("weights") else ():
        if key == "family":
            continue
        rd.require(key in WEIGHT_KEYS[family], f"key '{key}' does not apply to family '{family}'",
                   "weights", key)
        if key == "path":
            weights[key] = str((path.parent / cp.get("weights", key)).resolve())
        elif key == "isotropic":
            weights[key] = rd.get("weights", key, _bool)
        elif key == "exponents":
            weights[key] = rd.get("weights", key, _floats)
        else:
            weights[key] = rd.get("weights", key, float)

    kind = rd.get("initial", "kind", default="sine-product")
    rd.require(kind in INITIAL_KINDS, f"unknown initial kind '{kind}'", "initial", "kind")
    initial = {"kind": kind,
               "amplitude": rd.get("initial", "amplitude", float, 1.0),
               "positive": rd.get("initial", "positive", _bool, False)}
    if kind == "sine-product":
        initial["modes"] = rd.get("initial", "modes", _ints, (1,))
    elif kind == "bump":
        initial["center"] = rd.get("initial", "center", _floats, None)
        initial["radius"] = rd.get("initial", "radius", float, 0.25)
    elif kind == "random-smooth":
        initial["modes"] = rd.get("initial", "modes", int, 6)
    elif kind == "file":
        rel = rd.get("initial", "path", required=True)
        initial["path"] = str((path.parent / rel).resolve())

    p = rd.get("evolution", "p", float, required=True)
    rd.require(p > 1 and math.isfinite(p), "p must exceed 1", "evolution", "p")
    T = rd.get("evolution", "t", float, required=True)
    rd.require(T > 0, "T must be positive", "evolution", "t")
    n = rd.get("evolution", "n", int)
    refine_tol = rd.get("evolution", "refine_tol", float)
    rd.require((n is None) != (refine_tol is None), "give exactly one of 'n' and 'refine_tol'",
               "evolution", "n")
    if n is not None:
        rd.require(n >= 1, "n must be >= 1", "evolution", "n")
    else:
        rd.require(refine_tol > 0, "refine_tol must be positive", "evolution", "refine_tol")
    n0 = rd.get("evolution", "n0", int, 8)
    n_max = rd.get("evolution", "n_max", int, 256)
    snaps = rd.get("evolution", "snapshots", _floats, ())
    rd.require(all(0 <= t <= T for t in snaps), "snapshot times must lie in [0, T]",
               "evolution", "snapshots")

    solver_kw = {}
    if cp.has_section("solver"):
        types = {f.name: f.type for f in dataclasses.fields(InnerSolverConfig)}
        for key in cp.options("solver"):
            conv = {"int": int, "bool": _bool}.get(types[key], float)
            solver_kw[key] = rd.get("solver", key, conv)
    try:
        solver = InnerSolverConfig(**solver_kw)
    except Exception as exc:  # InvalidParameters from __post_init__
        rd.fail(str(exc), "solver")

    checks = rd.get("analysis", "checks", _names, ("apriori",))
    for c in checks:
        rd.require(c in CHECKS, f"unknown check '{c}'", "analysis", "checks")
    sigma = rd.get("analysis", "sigma", float, None)
    if sigma is None:
        sigma = default_sigma(dim, p)
    sigma_floor_ok = sigma > 1 or (sigma == 1 and set(checks) <= {"apriori", "comparison",
                                                                   "heat_oracle", "sobolev"})
    rd.require(sigma_floor_ok, "sigma must exceed 1", "analysis", "sigma")
    q0 = rd.get("analysis", "q0", float, None)
    if q0 is not None:
        rd.require(q0 >= 1, "q0 must be >= 1", "analysis", "q0")
        if sigma > 1:
            q_c = sigma / (sigma - 1) * (2 - p)
            rd.require(q0 > q_c, f"q0 must exceed q_c = sigma'(2-p) = {q_c:g} (got q0 = {q0:g})",
                       "analysis", "q0")
    if "ultracontractive" in checks:
        rd.require(q0 is not None, "check 'ultracontractive' needs q0", "analysis", "q0")
    if "nash" in checks:
        rd.require(q0 is not None and 1 <= q0 < 2, "check 'nash' needs q0 in [1, 2)", "analysis", "q0")
    if "extinction" in checks:
        rd.require(p < 2, "check 'extinction' needs p < 2", "evolution", "p")
    if "heat_oracle" in checks:
        rd.require(p == 2 and family == "identity" and kind == "sine-product",
                   "check 'heat_oracle' needs p = 2, identity weights and a sine-product datum",
                   "analysis", "checks")
    eps_ext = rd.get("analysis", "eps_ext", float, None)
    r_list = rd.get("analysis", "r_list", _floats, (1.0, 2.0, 3.0))
    rd.require(all(r >= 1 for r in r_list), "r_list entries must be >= 1", "analysis", "r_list")
    window = rd.get("analysis", "window", _floats, (0.05, 1.0))
    rd.require(len(window) == 2 and 0 <= window[0] < window[1] <= 1,
               "window must be two fractions 0 <= a < b <= 1", "analysis", "window")

    return Scenario(
        name=name, seed=seed, dim=dim, nodes=nodes, lower=lower, upper=upper,
        weights=weights, initial=initial, p=p, T=T, n=n, refine_tol=refine_tol, n0=n0,
        n_max=n_max, snapshots=snaps, solver=solver, checks=checks, sigma=sigma, q0=q0,
        eps_ext=eps_ext, r_list=r_list, window=window,
        sobolev_starts=rd.get("analysis", "sobolev_starts", int, 20),
        sobolev_inflation=rd.get("analysis", "sobolev_inflation", float, 1.1),
        probes=rd.get("analysis", "probes", int, 100),
        slack_factor=rd.get("analysis", "slack_factor", float, 10.0),
        source=path.read_text(), base_dir=path.parent)
