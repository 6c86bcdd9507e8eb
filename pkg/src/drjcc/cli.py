"""Command-line entry point: generate, cluster, run, baseline, evaluate, sweep.

Every subcommand writes its outputs plus ``manifest.json`` into
``--output-dir``. Exit status is 0 on success, 1 for invalid input and 2
for numerical failure (infeasible local problem or no convergence).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .admm import LocalSolveError, run_admm
from .analytics import AnalyticsError, elbow_select_k, extract_features, kmeans, label_clusters
from .config import ConfigError, RiskSpec, load_community_config, save_community_config
from .dro import ReformulationError
from .evaluation import (
    EvaluationError,
    compare_strategies,
    normalize_radii,
    realized_recourse,
    run_baseline,
    sweep_rho,
)
from .scenarios import ProfileError, load_profiles, split_train_test, write_profiles
from .synthetic import GeneratorSpec, generate_synthetic_community


class NumericalFailure(RuntimeError):
    pass


class UsageError(ValueError):
    pass


def fmt(x) -> str:
    return f"{float(x):.12g}"


def _round(obj):
    """Round every float in a JSON-like structure to 12 significant digits."""
    if isinstance(obj, float):
        return float(fmt(obj)) if np.isfinite(obj) else str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return _round(obj.item())
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_round(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


class Run:
    """Per-invocation bookkeeping for the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list = []
        self.stages: dict = {}
        self.inputs: list = []
        self.payload: bytes = b""
        self.seeds: dict = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def stage(self, name: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.stages[name] = time.perf_counter() - self.t0

        return _Timer()

    def manifest(self) -> None:
        digest = hashlib.sha256()
        for p in self.inputs:
            digest.update(Path(p).read_bytes())
        digest.update(self.payload)
        data = {
            "command": self.argv,
            "config_hash": digest.hexdigest(),
            "seeds": self.seeds,
            "version": __version__,
            "outputs": sorted(set(self.files) | {"manifest.json"}),
        }
        if self.args.timing:
            data["stage_seconds"] = self.stages
        write_json(self.out / "manifest.json", data)


# ------------------------------------------------------------ input helpers

def _load(run: Run):
    a = run.args
    if not a.config or not a.profiles:
        raise UsageError("--config and --profiles are required")
    run.inputs += [a.config, a.profiles]
    cfg = load_community_config(a.config)
    admm = cfg.admm
    overrides = {
        "sigma": a.sigma, "max_iter": a.max_iters, "tol_primal": a.tol_primal, "tol_dual": a.tol_dual,
    }
    admm = replace(admm, **{k: v for k, v in overrides.items() if v is not None})
    threads = os.environ.get("DRJCC_THREADS", "").strip()
    if threads and threads != "1":
        admm = replace(admm, parallel=True)
    risk = cfg.risk if a.epsilon is None else RiskSpec(a.epsilon, cfg.risk.weights)
    cfg = replace(cfg, admm=admm, risk=risk)
    if a.rho is not None and len(a.rho) == 1:
        cfg = replace(cfg, ambiguity=cfg.ambiguity.with_rho(a.rho[0]))
    return cfg, load_profiles(a.profiles, cfg)


def _radii(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--rho expects a number or comma list, got {text!r}") from None


def _schedule_rows(config, schedules, train):
    rows = []
    for pc in config.prosumers:
        s = schedules[pc.id]
        q_mean = realized_recourse(s, pc, train[pc.id].normalized()).mean(axis=0)
        for t in range(config.horizon):
            rows.append([pc.id, t, s.p[t], q_mean[t], s.pb[t], s.ps[t], s.E[t + 1], s.S[t + 1], s.Pe[t]])
    return rows


SCHEDULE_HEADER = ["prosumer", "hour", "p", "q_nominal", "pb", "ps", "E", "S", "Pe"]


# ------------------------------------------------------------ subcommands

def cmd_generate(run: Run) -> int:
    a = run.args
    shares = tuple(float(v) for v in a.shares.split(","))
    spec = GeneratorSpec(
        prosumers=a.prosumers, shares=shares, samples=a.samples, horizon=a.horizon,
        degree=a.degree, load_scale=a.load_scale, rho=a.rho[0] if a.rho else 0.03,
        epsilon=a.epsilon if a.epsilon is not None else 0.05,
    )
    run.seeds["generate"] = a.seed
    run.payload = json.dumps(_round(asdict(spec)), sort_keys=True).encode()
    with run.stage("generate"):
        cfg, scen = generate_synthetic_community(spec, a.seed)
    save_community_config(cfg, run.path("community.json"))
    write_profiles(scen, run.path("profiles.csv"))
    return 0


def cmd_cluster(run: Run) -> int:
    a = run.args
    cfg, scen = _load(run)
    run.seeds["kmeans"] = a.seed
    with run.stage("cluster"):
        feats = [extract_features(scen[pid].nominal_load) for pid in cfg.ids]
        n = len(feats)
        k_max = min(a.k_max, n)
        curve = []
        if a.k is not None:
            k = a.k
        else:
            elbow = elbow_select_k(feats, range(a.k_min, k_max + 1), a.restarts, a.seed)
            k, curve = elbow.k, elbow.curve()
        model = kmeans(feats, k, a.restarts, a.seed, ids=cfg.ids)
        if model.k <= 4:
            model = label_clusters(model, feats)
    write_csv(run.path("clusters.csv"), ["prosumer_id", "cluster", "label"],
              [[pid, model.assignment[pid], model.label_of(pid)] for pid in cfg.ids])
    write_csv(run.path("wcss_curve.csv"), ["k", "wcss"], [[k_, float(w)] for k_, w in curve])
    write_csv(run.path("features.csv"), ["prosumer_id", "ncr", "bhr", "lf", "cv", "peak_hour", "papr", "dtc"],
              [[pid, f.ncr, f.bhr, f.lf, f.cv, f.peak_hour, f.papr, f.dtc] for pid, f in zip(cfg.ids, feats)])
    return 0


def cmd_run(run: Run) -> int:
    cfg, scen = _load(run)
    with run.stage("admm"):
        res = run_admm(cfg, scen)
    timing = run.args.timing
    write_csv(run.path("trace.csv"), ["iter", "primal_residual", "aux_residual", "objective", "seconds"],
              [[r.iteration, r.primal_residual, r.aux_residual, r.objective, r.seconds if timing else 0.0]
               for r in res.trace])
    write_csv(run.path("schedules.csv"), SCHEDULE_HEADER, _schedule_rows(cfg, res.schedules, scen))
    write_json(run.path("summary.json"), {
        "converged": res.converged, "iterations": res.iterations, "objective": res.objective,
        "primal_residual": res.primal_residual, "aux_residual": res.aux_residual,
        "rho": cfg.ambiguity.rho, "epsilon": cfg.risk.epsilon, "sigma": cfg.admm.sigma,
    })
    if not res.converged:
        raise NumericalFailure(f"ADMM did not converge within {res.iterations} iterations")
    return 0


def cmd_baseline(run: Run) -> int:
    cfg, scen = _load(run)
    with run.stage("baseline"):
        base = run_baseline(cfg, scen)
    write_csv(run.path("schedules.csv"), SCHEDULE_HEADER, _schedule_rows(cfg, base.schedules, scen))
    write_json(run.path("summary.json"), {"objective": base.objective, "rho": cfg.ambiguity.rho,
                                          "epsilon": cfg.risk.epsilon})
    return 0


def _split(run: Run, scen):
    a = run.args
    run.seeds["split"] = a.seed
    return split_train_test(scen, a.train_fraction, a.seed)


def cmd_evaluate(run: Run) -> int:
    cfg, scen = _load(run)
    train, test = _split(run, scen)
    with run.stage("evaluate"):
        report = compare_strategies(cfg, train, test, solver=run.args.solver, seeds=run.seeds)
    write_json(run.path("report.json"), report.to_dict())
    if not report.admm_converged:
        raise NumericalFailure("ADMM did not converge; report written with the last iterate")
    return 0


def _read_labels(path) -> dict:
    with open(path, newline="") as fh:
        return {row["prosumer_id"]: row["label"] for row in csv.DictReader(fh)}


def cmd_sweep(run: Run) -> int:
    a = run.args
    cfg, scen = _load(run)
    radii = normalize_radii(a.rho if a.rho else [0.2, 0.1, 0.03, 0.01, 0.001])
    labels = None
    if a.clusters:
        run.inputs.append(a.clusters)
        labels = _read_labels(a.clusters)
    train, test = _split(run, scen)
    with run.stage("sweep"):
        rows = sweep_rho(cfg, train, test, radii, clusters=labels, solver=a.solver)
    groups = sorted(rows[0].cluster_costs)
    write_csv(run.path("sweep.csv"),
              ["rho", "in_sample_cost", "oos_cost", "violation"] + [f"cost_{g}" for g in groups],
              [[r.rho, r.in_sample, r.oos_cost, r.violation] + [r.cluster_costs[g] for g in groups] for r in rows])
    write_csv(run.path("fig11.csv"), ["rho", "oos_cost", "oos_worst_case_cost", "violation"],
              [[r.rho, r.oos_cost, r.oos_worst_case, r.violation] for r in rows])
    write_json(run.path("report.json"), {
        "sweep": [r.__dict__ for r in rows], "seeds": run.seeds,
        "train_samples": train.sample_count, "eval_samples": test.sample_count,
    })
    if not all(r.converged for r in rows):
        raise NumericalFailure("ADMM did not converge at some radius")
    return 0


COMMANDS = {
    "generate": cmd_generate, "cluster": cmd_cluster, "run": cmd_run,
    "baseline": cmd_baseline, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--profiles")
    common.add_argument("--rho", type=_radii, help="radius or comma-separated list")
    common.add_argument("--epsilon", type=float, help="joint violation tolerance (default 0.05)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--max-iters", type=int)
    common.add_argument("--tol-primal", type=float)
    common.add_argument("--tol-dual", type=float)
    common.add_argument("--sigma", type=float, help="ADMM penalty (default 0.1)")
    common.add_argument("--output-dir", default="out")
    common.add_argument("--timing", action="store_true", help="record wall times (outputs become run-dependent)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="drjcc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic community")
    g.add_argument("--prosumers", type=int, default=10)
    g.add_argument("--samples", type=int, default=30)
    g.add_argument("--horizon", type=int, default=24)
    g.add_argument("--shares", default="0.4,0.3,0.2,0.1")
    g.add_argument("--degree", type=int, default=4)
    g.add_argument("--load-scale", type=float, default=10.0)

    c = sub.add_parser("cluster", parents=[common], help="cluster load profiles")
    c.add_argument("--k", type=int)
    c.add_argument("--k-min", type=int, default=1)
    c.add_argument("--k-max", type=int, default=8)
    c.add_argument("--restarts", type=int, default=10)

    sub.add_parser("run", parents=[common], help="coordinate the community with ADMM")
    sub.add_parser("baseline", parents=[common], help="standalone schedules without trading")
    for name in ("evaluate", "sweep"):
        e = sub.add_parser(name, parents=[common])
        e.add_argument("--train-fraction", type=float, default=0.5)
        e.add_argument("--solver", choices=("admm", "centralized"), default="admm")
        if name == "sweep":
            e.add_argument("--clusters", help="clusters.csv for per-cluster costs")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args, argv)
        code = COMMANDS[args.command](run)
        run.manifest()
        return code
    except NumericalFailure as exc:
        run.manifest()
        print(f"drjcc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except LocalSolveError as exc:
        print(f"drjcc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ProfileError, ReformulationError, AnalyticsError, EvaluationError,
            UsageError, ValueError, OSError) as exc:
        print(f"drjcc {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
