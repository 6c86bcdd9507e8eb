"""Standalone baseline against coordinated trading on the bundled community.

Usage: python3 scripts/reproduce_comparison.py [--solver admm|centralized]
"""

import argparse
import json

from drjcc.evaluation import compare_strategies
from drjcc.synthetic import BUNDLED_SEED, bundled_community


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--solver", choices=("admm", "centralized"), default="centralized")
    args = ap.parse_args()

    cfg, scen = bundled_community()
    rep = compare_strategies(cfg, scen, scen, solver=args.solver, seeds={"generate": BUNDLED_SEED})
    print(f"total cost  baseline {rep.total_cost_baseline:9.2f} $   proposed {rep.total_cost_proposed:9.2f} $"
          f"   reduction {100 * rep.cost_reduction:6.1f}%")
    print(f"PAR         baseline {rep.par_baseline:9.3f}     proposed {rep.par_proposed:9.3f}"
          f"     reduction {100 * rep.par_reduction:6.1f}%")
    print(f"violation   baseline {rep.violation_baseline:9.3f}     proposed {rep.violation_proposed:9.3f}")
    if args.solver == "admm":
        print(f"ADMM iterations {rep.admm_iterations} (converged: {rep.admm_converged})")
    print(json.dumps({k: v for k, v in rep.to_dict().items() if k not in ("per_prosumer", "sweep")}, indent=2))


if __name__ == "__main__":
    main()
