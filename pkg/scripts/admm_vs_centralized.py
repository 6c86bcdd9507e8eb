"""Compare the distributed coordinator with the single-QP solve on small communities.

Usage: python3 scripts/admm_vs_centralized.py [--seeds 5] [--prosumers 3]
"""

import argparse
import time

import numpy as np

from drjcc.admm import run_admm
from drjcc.evaluation import solve_centralized
from drjcc.synthetic import GeneratorSpec, generate_synthetic_community


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--prosumers", type=int, default=3)
    ap.add_argument("--samples", type=int, default=10)
    args = ap.parse_args()

    spec = GeneratorSpec(prosumers=args.prosumers, samples=args.samples, degree=2)
    print(f"{'seed':>4} {'iters':>5} {'rel gap':>9} {'reciprocity':>11} {'seconds':>8}")
    for seed in range(args.seeds):
        cfg, scen = generate_synthetic_community(spec, seed)
        t0 = time.perf_counter()
        res = run_admm(cfg, scen)
        secs = time.perf_counter() - t0
        ref = solve_centralized(cfg, scen)
        gap = abs(res.objective - ref.objective) / abs(ref.objective)
        recip = max((np.max(np.abs(res.schedules[n].pe[m] + res.schedules[m].pe[n])) for n, m in cfg.edges()),
                    default=0.0)
        print(f"{seed:>4} {res.iterations:>5} {gap:>9.1e} {recip:>11.1e} {secs:>8.1f}")


if __name__ == "__main__":
    main()
