"""R^2 of x*z regressed on {x, y} and of x on {y}, for smoothed noisy Lorenz data.

Usage: python scripts/linear_dependence.py [--noise 150 200] [--window 201] [--seed 0]
"""
import argparse

from sindy_highnoise.assess import r2_fit
from sindy_highnoise.dynsys import get_system, make_dataset
from sindy_highnoise.library import build_polynomial_library
from sindy_highnoise.pipeline import prepare_trajectory


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--noise", type=float, nargs="+", default=[150.0, 200.0])
    ap.add_argument("--window", type=int, default=201)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    lib = build_polynomial_library(3, 2)
    idx = {n: i for i, n in enumerate(lib.term_names())}
    for noise in args.noise:
        train, val = make_dataset(get_system("lorenz"), noise, seed=args.seed)
        for k, traj in enumerate(train + val):
            th = prepare_trajectory(traj, lib, args.window).theta
            r_xz = r2_fit(th[:, idx["x*z"]], th[:, [idx["x"], idx["y"]]])[2]
            r_x = r2_fit(th[:, idx["x"]], th[:, [idx["y"]]])[2]
            print(f"noise {noise:5.0f}%  trajectory {k}:  R2(xz | x,y) = {r_xz:.3f}   R2(x | y) = {r_x:.3f}")


if __name__ == "__main__":
    main()
