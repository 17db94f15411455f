"""Command line entry point: ``wplap run|suite|estimate-sobolev|self-test``.

Exit codes: 0 all requested checks passed, 1 a check failed (or a suite
member did), 2 bad scenario / usage, 3 the inner solver did not converge.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis as an
from .errors import ParseError
from .grid import write_snapshot
from .report import write_csv
from .runner import EXIT_FAILED, EXIT_OK, EXIT_USAGE, make_field, make_grid, run_scenario
from .scenario import parse_scenario

log = logging.getLogger("wplap")

SELF_TEST_SCENARIOS = {
    "heat": """
[grid]
dim = 1
nodes = 65
[initial]
kind = sine-product
modes = 1
[evolution]
p = 2
T = 0.1
n = 20
[analysis]
checks = apriori, heat_oracle
""",
    "fast-diffusion": """
[grid]
dim = 1
nodes = 65
[weights]
family = random
[initial]
kind = random-smooth
[evolution]
p = 1.5
T = 0.05
n = 10
[analysis]
checks = apriori, comparison
""",
    "slow-diffusion-2d": """
[grid]
dim = 2
nodes = 17
[weights]
family = random
isotropic = false
[initial]
kind = bump
radius = 0.3
[evolution]
p = 3
T = 0.05
n = 10
[analysis]
checks = apriori
""",
}


def _parse(path, args):
    try:
        return parse_scenario(path, seed=args.seed)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None


def _print_report(rep, stream=sys.stdout):
    for c in rep.checks:
        print(c.line(), file=stream)


def cmd_run(args):
    scn = _parse(args.scenario, args)
    if scn is None:
        return EXIT_USAGE
    out = Path(args.out) if args.out else Path("out") / scn.name
    code, rep = run_scenario(scn, out, strict=args.strict)
    _print_report(rep)
    print(f"{scn.name}: {'PASS' if code == EXIT_OK else 'FAIL'} (exit {code}); artifacts in {out}")
    return code


def _suite_member(job):
    path, out, seed, strict = job
    try:
        scn = parse_scenario(path, seed=seed)
    except ParseError as exc:
        return path.stem, EXIT_USAGE, {"scenario_parsed": False}, str(exc)
    code, rep = run_scenario(scn, out / scn.name, strict=strict)
    return scn.name, code, rep.verdicts(), rep.info.get("error", "")


def cmd_suite(args):
    directory = Path(args.directory)
    if not directory.is_dir():
        print(f"error: {directory} is not a directory", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out) if args.out else Path("out") / "suite"
    files = sorted(directory.glob("*.ini"))
    jobs = [(f, out, args.seed, args.strict) for f in files]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as ex:
            results = list(ex.map(_suite_member, jobs))
    else:
        results = [_suite_member(j) for j in jobs]
    names = []
    for _, _, verdicts, _ in results:
        names += [n for n in verdicts if n not in names]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for scn_name, code, verdicts, err in results:
        cells = [("PASS" if verdicts[n] else "FAIL") if n in verdicts else "-" for n in names]
        rows.append([scn_name, "PASS" if code == EXIT_OK else f"FAIL({code})"] + cells)
    write_csv(out / "summary.csv", ["scenario", "overall"] + names, rows)
    width = max([len("scenario")] + [len(r[0]) for r in rows])
    print(f"{'scenario':<{width}}  overall   " + "  ".join(names))
    for r in rows:
        print(f"{r[0]:<{width}}  {r[1]:<8}  " + "  ".join(f"{c:<{len(n)}}" for c, n in zip(r[2:], names)))
    failed = [r[0] for r in rows if r[1] != "PASS"]
    print(f"{len(rows) - len(failed)}/{len(rows)} scenarios passed")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_estimate_sobolev(args):
    scn = _parse(args.scenario, args)
    if scn is None:
        return EXIT_USAGE
    out = Path(args.out) if args.out else Path("out") / scn.name
    out.mkdir(parents=True, exist_ok=True)
    grid = make_grid(scn)
    field = make_field(scn, grid)
    cfg = an.SobolevConfig(n_starts=scn.sobolev_starts, seed=scn.seed)
    est = an.estimate_sobolev(grid, field, scn.p, scn.sigma, cfg)
    write_csv(out / "sobolev_starts.csv", ["start", "ratio", "iterations"],
              [(i, float(r), int(k)) for i, (r, k) in enumerate(zip(est.start_ratios, est.iterations))])
    write_snapshot(out / "sobolev_maximizer.txt", est.maximizer)
    print(f"M_hat = {est.M_hat:.12g}  (p = {scn.p:g}, sigma = {scn.sigma:g}, {cfg.n_starts} starts)")
    return EXIT_OK


def cmd_self_test(args):
    out = Path(args.out) if args.out else Path("out") / "self-test"
    out.mkdir(parents=True, exist_ok=True)
    worst = EXIT_OK
    for name, text in SELF_TEST_SCENARIOS.items():
        path = out / f"{name}.ini"
        path.write_text(text.lstrip())
        scn = parse_scenario(path, seed=args.seed)
        code, rep = run_scenario(scn, out / name, strict=args.strict, corrupted=args.corrupt)
        failed = [c.name for c in rep.checks if not c.passed]
        print(f"{name}: {'PASS' if code == EXIT_OK else 'FAIL'}"
              + (f"  failed: {', '.join(failed)}" if failed else ""))
        worst = max(worst, code)
    return worst


def build_parser():
    ap = argparse.ArgumentParser(prog="wplap", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
    common.add_argument("--threads", type=int, default=1, help="concurrent scenarios in a suite")
    common.add_argument("--strict", action="store_true", help="slack factor 1 instead of 10")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", parents=[common], help="run one scenario")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("suite", parents=[common], help="run every *.ini in a directory")
    p.add_argument("directory")
    p.set_defaults(fn=cmd_suite)
    p = sub.add_parser("estimate-sobolev", parents=[common], help="estimate the Sobolev constant")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_estimate_sobolev)
    p = sub.add_parser("self-test", parents=[common], help="built-in sanity scenarios")
    p.add_argument("--corrupt", action="store_true",
                   help="inflate the last snapshot of every run; the checks must then fail")
    p.set_defaults(fn=cmd_self_test)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
