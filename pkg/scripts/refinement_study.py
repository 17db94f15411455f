"""Doubling distances of the time discretisation for one scenario file.

    python scripts/refinement_study.py scenarios/refinement_heat.ini --n-max 512

Prints n, max_t |u_n - u_2n| (relative to |u0|) and the ratio between
consecutive rows; first order in the step shows up as ratios near 1/2.
"""
import argparse
from pathlib import Path

from wplap.evolution import coarse_distance, evolve
from wplap.grid import norm_Lq_v
from wplap.report import write_csv
from wplap.runner import make_field, make_grid, make_initial
from wplap.scenario import parse_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario")
    ap.add_argument("--n0", type=int, default=8)
    ap.add_argument("--n-max", type=int, default=256)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    scn = parse_scenario(args.scenario)
    grid = make_grid(scn)
    field = make_field(scn, grid)
    u0 = make_initial(scn, grid)
    scale = norm_Lq_v(u0, 2, field) or 1.0
    rows, prev = [], None
    coarse = evolve(u0, scn.T, args.n0, scn.p, field, scn.solver)
    while 2 * coarse.n <= args.n_max:
        fine = evolve(u0, scn.T, 2 * coarse.n, scn.p, field, scn.solver)
        d = coarse_distance(coarse, fine) / scale
        ratio = d / prev if prev else float("nan")
        rows.append((coarse.n, d, ratio))
        print(f"n = {coarse.n:5d}   distance = {d:.3e}   ratio = {ratio:.3f}")
        prev, coarse = d, fine
    out = Path(args.out or f"out/{scn.name}")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "refinement_study.csv", ["n", "relative_distance", "ratio"], rows)


if __name__ == "__main__":
    main()
