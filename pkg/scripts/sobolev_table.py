"""Estimated Sobolev constants over a small (p, sigma) table on the unit interval.

    python scripts/sobolev_table.py --nodes 256 --starts 10

The sigma = 1, p = 2 entry is the Poincare constant, whose exact discrete
value h / (2 sin(pi h / 2)) is printed for comparison.
"""
import argparse
import math
from pathlib import Path

from wplap import analysis as an
from wplap.grid import Grid
from wplap.report import write_csv
from wplap.weights import WeightFamilySpec, build_field


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=256)
    ap.add_argument("--starts", type=int, default=10)
    ap.add_argument("--family", default="identity", choices=["identity", "isotropic-power"])
    ap.add_argument("--out", default="out/sobolev")
    args = ap.parse_args()

    grid = Grid.box(args.nodes)
    field = build_field(WeightFamilySpec(args.family), grid)
    cfg = an.SobolevConfig(n_starts=args.starts)
    rows = []
    for p in (1.5, 2.0, 3.0):
        for sigma in (1.0, 4 / 3, 2.0, 3.0):
            est = an.estimate_sobolev(grid, field, p, sigma, cfg)
            rows.append((p, sigma, est.M_hat, max(est.iterations)))
            print(f"p = {p:4g}  sigma = {sigma:6.4g}  M_hat = {est.M_hat:.6f}")
    if args.family == "identity":
        h = grid.spacing[0]
        print(f"discrete Poincare constant: {h / (2 * math.sin(math.pi * h / 2)):.6f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sobolev_table.csv", ["p", "sigma", "M_hat", "max_iterations"], rows)


if __name__ == "__main__":
    main()
