"""Extinction time against its Sobolev-based bound, for several amplitudes.

    python scripts/extinction_study.py --nodes 128 --p 1.5 --out out/extinction

Both sides scale like amplitude^(2-p), so the ratio t_ext / T0 should be
roughly constant across rows.
"""
import argparse
from pathlib import Path

import numpy as np

from wplap import analysis as an
from wplap.evolution import evolve
from wplap.grid import Grid
from wplap.oracles import sine_product
from wplap.report import write_csv
from wplap.weights import WeightFamilySpec, build_field


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=128)
    ap.add_argument("--p", type=float, default=1.5)
    ap.add_argument("--sigma", type=float, default=4 / 3)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--amplitudes", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--out", default="out/extinction")
    args = ap.parse_args()

    grid = Grid.box(args.nodes)
    field = build_field(WeightFamilySpec("identity"), grid)
    M = 1.1 * an.estimate_sobolev(grid, field, args.p, args.sigma).M_hat
    rows = []
    for A in args.amplitudes:
        u0 = sine_product(grid, 1, A)
        # horizon a little past the bound so the solution has time to vanish
        T0, _, _ = an.extinction_time_bound(args.p, args.sigma, M, u0, field)
        traj = evolve(u0, 1.2 * T0, args.steps, args.p, field)
        res = an.extinction_analysis(traj, args.sigma, M)
        t_ext = np.nan if res.t_ext is None else res.t_ext
        rows.append((A, t_ext, res.T0, t_ext / res.T0))
        print(f"A = {A:6.3g}   t_ext = {t_ext:9.4g}   T0 = {res.T0:9.4g}   ratio = {t_ext / res.T0:.3f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "extinction.csv", ["amplitude", "t_ext", "T0", "ratio"], rows)


if __name__ == "__main__":
    main()
