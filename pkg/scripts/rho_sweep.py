"""Wasserstein radius sweep over several generator seeds (50/50 train/test split).

Usage: python3 scripts/rho_sweep.py [--seeds 5] [--radii 0.2,0.1,0.03,0.01,0.001]
"""

import argparse

from drjcc.evaluation import sweep_rho
from drjcc.scenarios import split_train_test
from drjcc.synthetic import GeneratorSpec, generate_synthetic_community


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--radii", default="0.2,0.1,0.03,0.01,0.001")
    ap.add_argument("--solver", choices=("admm", "centralized"), default="centralized")
    args = ap.parse_args()
    radii = [float(r) for r in args.radii.split(",")]

    print(f"{'seed':>4} {'rho':>6} {'in-sample':>10} {'oos':>10} {'oos worst':>10} {'violation':>9}")
    for seed in range(args.seeds):
        cfg, scen = generate_synthetic_community(GeneratorSpec(), seed)
        train, test = split_train_test(scen, 0.5, seed)
        for row in sweep_rho(cfg, train, test, radii, solver=args.solver):
            print(f"{seed:>4} {row.rho:>6g} {row.in_sample:>10.3f} {row.oos_cost:>10.3f} "
                  f"{row.oos_worst_case:>10.3f} {row.violation:>9.3f}")


if __name__ == "__main__":
    main()
