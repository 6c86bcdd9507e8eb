"""Standalone baseline, out-of-sample cost and violation, PAR and radius sweeps."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .admm import LocalSolveError, run_admm
from .analytics import ClusterModel
from .config import AmbiguitySpec, CommunityConfig, RiskSpec
from .dro import (
    DecisionSchedule,
    assemble_centralized_problem,
    assemble_local_problem,
    bonferroni_split,
    extract_schedule,
    first_stage_cost,
    prosumer_objective,
    worst_case_expectation_value,
)
from .qp import solve_qp
from .scenarios import ScenarioSet

VIOLATION_TOL = 1e-6


class EvaluationError(ValueError):
    pass


@dataclass
class CommunitySolution:
    schedules: dict
    objective: float
    iterations: int = 0
    converged: bool = True
    trace: list = field(default_factory=list)


def run_baseline(config: CommunityConfig, train: ScenarioSet, amb=None, risk=None) -> CommunitySolution:
    """Every prosumer optimizes alone: no trade variables, no consensus terms."""
    amb = config.ambiguity if amb is None else amb
    risk = config.risk if risk is None else risk
    eps = bonferroni_split(risk, len(config.prosumers))
    schedules, total = {}, 0.0
    for pc, e in zip(config.prosumers, eps):
        local = assemble_local_problem(pc.id, config, train, amb, e, neighbors=())
        sol = solve_qp(local.qp)
        if not sol.optimal:
            raise LocalSolveError(pc.id, 0, sol.status.value)
        schedules[pc.id] = extract_schedule(sol.x, local.layout)
        total += prosumer_objective(schedules[pc.id], pc, config.prices)
    return CommunitySolution(schedules, total)


def solve_centralized(config: CommunityConfig, train: ScenarioSet, amb=None, risk=None) -> CommunitySolution:
    """Whole community as one QP; the same optimum the coordinator converges to."""
    amb = config.ambiguity if amb is None else amb
    risk = config.risk if risk is None else risk
    qp, layouts = assemble_centralized_problem(config, train, amb, risk)
    sol = solve_qp(qp)
    if not sol.optimal:
        raise LocalSolveError("<community>", 0, sol.status.value)
    schedules = {pid: extract_schedule(sol.x, lay) for pid, lay in layouts.items()}
    return CommunitySolution(schedules, sol.objective)


def solve_community(config, train, amb=None, risk=None, solver: str = "admm") -> CommunitySolution:
    if solver == "admm":
        res = run_admm(config, train, amb, risk)
        return CommunitySolution(res.schedules, res.objective, res.iterations, res.converged, res.trace)
    if solver == "centralized":
        return solve_centralized(config, train, amb, risk)
    raise EvaluationError(f"unknown solver {solver!r}")


# ------------------------------------------------------------ realized quantities

def realized_recourse(sched: DecisionSchedule, pc, xi: np.ndarray) -> np.ndarray:
    """Recourse actually delivered per sample: the linear rule clipped to its box."""
    return np.clip(sched.Q(xi), pc.q_min, pc.q_max)


def _check_dims(config: CommunityConfig, schedules: dict, test: ScenarioSet):
    for pc in config.prosumers:
        if pc.id not in schedules or pc.id not in test.prosumers:
            raise EvaluationError(f"prosumer {pc.id!r} missing from schedules or evaluation samples")
        if test[pc.id].horizon != len(schedules[pc.id].p):
            raise EvaluationError(f"prosumer {pc.id!r}: horizon mismatch")


@dataclass
class CostBreakdown:
    first_stage: dict
    realized_rt: dict
    worst_case_rt: dict

    @property
    def realized(self) -> dict:
        return {k: self.first_stage[k] + self.realized_rt[k] for k in self.first_stage}

    @property
    def worst_case(self) -> dict:
        return {k: self.first_stage[k] + self.worst_case_rt[k] for k in self.first_stage}

    @property
    def total_realized(self) -> float:
        return float(sum(self.realized.values()))

    @property
    def total_worst_case(self) -> float:
        return float(sum(self.worst_case.values()))


def _worst_case_rt(Q, c_q, xi, amb: AmbiguitySpec) -> float:
    if amb.bounded:
        return worst_case_expectation_value(Q, c_q, xi, amb)
    # unbounded support: the fragment reduces to mean plus rho times the dual norm
    return float(np.mean(xi @ Q.T @ c_q) + amb.rho * np.max(np.abs(Q.T @ c_q)))


def out_of_sample_cost(schedules: dict, config: CommunityConfig, test: ScenarioSet, amb=None) -> CostBreakdown:
    """First-stage cost plus realized (sample mean) and worst-case real-time cost per prosumer."""
    amb = config.ambiguity if amb is None else amb
    _check_dims(config, schedules, test)
    c_q = config.prices.c_q
    first, realized, worst = {}, {}, {}
    for pc in config.prosumers:
        sched = schedules[pc.id]
        xi = test[pc.id].normalized()
        first[pc.id] = first_stage_cost(sched, pc, config.prices)
        realized[pc.id] = float(np.mean(realized_recourse(sched, pc, xi) @ c_q))
        worst[pc.id] = _worst_case_rt(sched.Q.Q, c_q, xi, amb)
    return CostBreakdown(first, realized, worst)


@dataclass
class ViolationReport:
    overall: float
    per_prosumer: dict
    violations: int
    pairs: int


def _violation_matrix(sched, pc, sc) -> np.ndarray:
    xi = sc.normalized()
    supply = sched.supply(realized_recourse(sched, pc, xi))
    return np.any(sc.realized_net() - supply > VIOLATION_TOL, axis=1)


def out_of_sample_violation(schedules: dict, config: CommunityConfig, test: ScenarioSet) -> ViolationReport:
    """Share of (prosumer, sample) pairs whose demand exceeds supply in some hour."""
    _check_dims(config, schedules, test)
    per, count = {}, 0
    for pc in config.prosumers:
        v = _violation_matrix(schedules[pc.id], pc, test[pc.id])
        per[pc.id] = float(v.mean())
        count += int(v.sum())
    pairs = len(config.prosumers) * test.sample_count
    return ViolationReport(count / pairs, per, count, pairs)


def out_of_sample_violation_naive(schedules: dict, config: CommunityConfig, test: ScenarioSet) -> ViolationReport:
    """Loop-based reference for :func:`out_of_sample_violation`."""
    per, count = {}, 0
    for pc in config.prosumers:
        sched, sc = schedules[pc.id], test[pc.id]
        bad = 0
        for i in range(sc.count):
            xi = sc.samples[i] / sc.scale
            hit = False
            for t in range(sc.horizon):
                q = min(max(float(sched.Q.Q[t] @ xi), pc.q_min), pc.q_max)
                supply = sched.p[t] + q + sched.pb[t] - sched.ps[t] + sum(v[t] for v in sched.pe.values())
                demand = sc.nominal_net[t] + sc.samples[i, t]
                if demand - supply > VIOLATION_TOL:
                    hit = True
                    break
            bad += hit
        per[pc.id] = bad / sc.count
        count += bad
    pairs = len(config.prosumers) * test.sample_count
    return ViolationReport(count / pairs, per, count, pairs)


def aggregate_grid_draw(schedules: dict) -> np.ndarray:
    """Hourly community draw from the grid: sum over prosumers of max(0, p)."""
    return np.sum([np.maximum(s.p, 0.0) for s in schedules.values()], axis=0)


def compute_par(series) -> float:
    x = np.asarray(series, dtype=float)
    if np.any(x < 0):
        raise EvaluationError("aggregate demand must be nonnegative")
    if not np.any(x > 0):
        raise EvaluationError("aggregate demand is zero at every hour")
    return float(x.max() / x.mean())


# ------------------------------------------------------------ comparison

@dataclass
class EvaluationReport:
    total_cost_baseline: float
    total_cost_proposed: float
    cost_reduction: float
    par_baseline: float
    par_proposed: float
    par_reduction: float
    worst_case_cost_baseline: float
    worst_case_cost_proposed: float
    objective_baseline: float
    objective_proposed: float
    violation_baseline: float
    violation_proposed: float
    admm_iterations: int
    admm_converged: bool
    train_samples: int
    eval_samples: int
    seeds: dict = field(default_factory=dict)
    per_prosumer: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def compare_strategies(
    config: CommunityConfig,
    train: ScenarioSet,
    evaluation: ScenarioSet,
    amb=None,
    risk=None,
    solver: str = "admm",
    seeds: dict = None,
) -> EvaluationReport:
    """Standalone baseline against coordinated trading on one evaluation set."""
    base = run_baseline(config, train, amb, risk)
    prop = solve_community(config, train, amb, risk, solver)
    cb = out_of_sample_cost(base.schedules, config, evaluation, amb)
    cp = out_of_sample_cost(prop.schedules, config, evaluation, amb)
    par_b = compute_par(aggregate_grid_draw(base.schedules))
    par_p = compute_par(aggregate_grid_draw(prop.schedules))
    per = {
        pid: {"baseline": cb.realized[pid], "proposed": cp.realized[pid]} for pid in config.ids
    }
    return EvaluationReport(
        total_cost_baseline=cb.total_realized,
        total_cost_proposed=cp.total_realized,
        cost_reduction=1.0 - cp.total_realized / cb.total_realized,
        par_baseline=par_b,
        par_proposed=par_p,
        par_reduction=1.0 - par_p / par_b,
        worst_case_cost_baseline=cb.total_worst_case,
        worst_case_cost_proposed=cp.total_worst_case,
        objective_baseline=base.objective,
        objective_proposed=prop.objective,
        violation_baseline=out_of_sample_violation(base.schedules, config, evaluation).overall,
        violation_proposed=out_of_sample_violation(prop.schedules, config, evaluation).overall,
        admm_iterations=prop.iterations,
        admm_converged=prop.converged,
        train_samples=train.sample_count,
        eval_samples=evaluation.sample_count,
        seeds=dict(seeds or {}),
        per_prosumer=per,
    )


# ------------------------------------------------------------ radius sweep

@dataclass
class SweepRow:
    rho: float
    in_sample: float
    oos_cost: float
    oos_worst_case: float
    violation: float
    cluster_costs: dict
    iterations: int
    converged: bool


def normalize_radii(rho_list) -> list:
    """Descending unique radii; duplicates are dropped with a warning."""
    radii = [float(r) for r in rho_list]
    if any(r < 0 for r in radii):
        raise EvaluationError("radii must be nonnegative")
    unique = sorted(set(radii), reverse=True)
    if len(unique) < len(radii):
        warnings.warn(f"duplicate radii removed: {radii}", stacklevel=3)
    if len(unique) < 2:
        raise EvaluationError("a sweep needs at least two distinct radii")
    return unique


def cluster_groups(config: CommunityConfig, clusters: ClusterModel = None) -> dict:
    """Cluster name -> member ids.

    ``clusters`` is a fitted model or a plain id -> label mapping; without
    one everyone falls in a single group.
    """
    if clusters is None:
        return {"all": list(config.ids)}
    label = clusters.label_of if isinstance(clusters, ClusterModel) else clusters.__getitem__
    groups = {}
    for pid in config.ids:
        groups.setdefault(label(pid), []).append(pid)
    return groups


def sweep_rho(
    config: CommunityConfig,
    train: ScenarioSet,
    test: ScenarioSet,
    rho_list,
    risk: RiskSpec = None,
    clusters=None,
    solver: str = "admm",
) -> list:
    """Train at each radius and evaluate on ``test``; rows in descending radius."""
    groups = cluster_groups(config, clusters)
    rows = []
    for rho in normalize_radii(rho_list):
        amb = config.ambiguity.with_rho(rho)
        sol = solve_community(config, train, amb, risk, solver)
        cost = out_of_sample_cost(sol.schedules, config, test, amb)
        realized = cost.realized
        rows.append(
            SweepRow(
                rho=rho,
                in_sample=sol.objective,
                oos_cost=cost.total_realized,
                oos_worst_case=cost.total_worst_case,
                violation=out_of_sample_violation(sol.schedules, config, test).overall,
                cluster_costs={g: float(sum(realized[p] for p in ids)) for g, ids in groups.items()},
                iterations=sol.iterations,
                converged=sol.converged,
            )
        )
    return rows
