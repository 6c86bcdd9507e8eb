"""Two-block consensus ADMM over a simulated per-edge message bus.

Every iteration solves the prosumers' local problems (independently, so
optionally in parallel), projects the published trades onto the
antisymmetric consensus set in closed form and takes a multiplier step.
Only edge quantities (trade proposals and multipliers) cross the bus.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import AdmmConfig, AmbiguitySpec, CommunityConfig, RiskSpec
from .dro import (
    DecisionSchedule,
    LocalProblem,
    assemble_local_problem,
    bonferroni_split,
    extract_schedule,
    prosumer_objective,
)
from .qp import solve_qp
from .scenarios import ScenarioSet

log = logging.getLogger(__name__)


class LocalSolveError(RuntimeError):
    """A prosumer's local problem could not be solved to optimality."""

    def __init__(self, pid: str, iteration: int, status: str):
        super().__init__(f"local problem of prosumer {pid!r} is {status} at iteration {iteration}")
        self.pid = pid
        self.iteration = iteration
        self.status = status


def worker_count(parallel: bool) -> int:
    """Thread budget from DRJCC_THREADS (0 or unset = cpu count)."""
    if not parallel:
        return 1
    raw = os.environ.get("DRJCC_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


class EdgeMailbox:
    """In-process stand-in for the network between neighbors.

    Prosumer ``n`` posts ``(p_nm, lambda_nm)`` on each outgoing edge; the
    coordinator reads the reverse edge when updating the pair.
    """

    def __init__(self, edges):
        self._slots = {e: None for e in edges}

    def publish(self, n: str, m: str, p: np.ndarray, lam: np.ndarray) -> None:
        if (n, m) not in self._slots:
            raise KeyError(f"no edge {n}->{m}")
        self._slots[(n, m)] = (np.array(p, dtype=float), np.array(lam, dtype=float))

    def read(self, n: str, m: str):
        msg = self._slots[(n, m)]
        if msg is None:
            raise LookupError(f"nothing published on edge {n}->{m}")
        return msg


@dataclass
class TraceRow:
    iteration: int
    primal_residual: float
    aux_residual: float
    dual_step: float  # sum of ||lambda^{k+1} - lambda^k||, equals sigma * primal_residual
    objective: float
    seconds: float


@dataclass
class AdmmState:
    """Per directed edge: trade proposal, consensus auxiliary and multiplier."""

    sigma: float
    p: dict
    phat: dict
    lam: dict
    k: int = 0
    trace: list = field(default_factory=list)

    @classmethod
    def zeros(cls, edges, T: int, sigma: float) -> "AdmmState":
        z = lambda: {e: np.zeros(T) for e in edges}  # noqa: E731
        return cls(sigma, z(), z(), z())

    @property
    def edges(self) -> list:
        return list(self.p)

    def pairs(self):
        """Each undirected edge once, as (n, m) with (m, n) also present."""
        seen = set()
        for n, m in self.p:
            if (m, n) not in self.p:
                raise KeyError(f"edge {n}->{m} has no reverse")
            if (m, n) not in seen:
                seen.add((n, m))
                yield n, m


def auxiliary_update(state: AdmmState) -> dict:
    """Closed-form projection; returns the previous auxiliaries."""
    old = {e: v.copy() for e, v in state.phat.items()}
    s = state.sigma
    for n, m in state.pairs():
        h = 0.5 * (state.p[(n, m)] - state.p[(m, n)]) + (state.lam[(n, m)] - state.lam[(m, n)]) / (2 * s)
        state.phat[(n, m)] = h
        state.phat[(m, n)] = -h
    return old


def dual_update(state: AdmmState) -> dict:
    """lambda += sigma (p - phat); returns the previous multipliers."""
    old = {e: v.copy() for e, v in state.lam.items()}
    for e in state.lam:
        state.lam[e] = state.lam[e] + state.sigma * (state.p[e] - state.phat[e])
    return old


def compute_residuals(state: AdmmState, phat_prev: dict):
    """(sum ||p - phat||_2, sigma * sum ||phat - phat_prev||_2) over directed edges."""
    primal = sum(float(np.linalg.norm(state.p[e] - state.phat[e])) for e in state.p)
    aux = state.sigma * sum(float(np.linalg.norm(state.phat[e] - phat_prev[e])) for e in state.p)
    return primal, aux


@dataclass
class CoordinationResult:
    schedules: dict  # id -> DecisionSchedule
    converged: bool
    iterations: int
    primal_residual: float
    aux_residual: float
    objective: float
    trace: list
    state: AdmmState

    @property
    def seconds_per_iteration(self) -> list:
        return [row.seconds for row in self.trace]


class _Prosumer:
    """Private side of a prosumer: its local problem and latest schedule."""

    def __init__(self, local: LocalProblem, config: CommunityConfig):
        self.local = local
        self.pc = config[local.pid]
        self.prices = config.prices
        self.schedule: DecisionSchedule = None

    def solve(self, lam: dict, phat: dict, iteration: int) -> DecisionSchedule:
        sol = solve_qp(self.local.with_consensus(lam, phat))
        if not sol.optimal:
            raise LocalSolveError(self.local.pid, iteration, sol.status.value)
        self.schedule = extract_schedule(sol.x, self.local.layout)
        return self.schedule


def primal_update(state: AdmmState, agents: dict, bus: EdgeMailbox, pool=None) -> None:
    """Solve every local problem with the current auxiliaries and multipliers."""
    k = state.k + 1

    def work(pid):
        agent = agents[pid]
        nbrs = agent.local.layout.pe
        lam = {m: state.lam[(pid, m)] for m in nbrs}
        phat = {m: state.phat[(pid, m)] for m in nbrs}
        return pid, agent.solve(lam, phat, k)

    results = list(pool.map(work, agents)) if pool else [work(pid) for pid in agents]
    for pid, sched in results:
        for m, v in sched.pe.items():
            bus.publish(pid, m, v, state.lam[(pid, m)])
            state.p[(pid, m)] = bus.read(pid, m)[0]


def run_admm(
    config: CommunityConfig,
    train: ScenarioSet,
    amb: AmbiguitySpec = None,
    risk: RiskSpec = None,
    admm: AdmmConfig = None,
) -> CoordinationResult:
    """Coordinate the community until both residuals meet their tolerances.

    Non-convergence within ``max_iter`` is reported through ``converged``;
    a failed local solve raises :class:`LocalSolveError`.
    """
    amb = config.ambiguity if amb is None else amb
    risk = config.risk if risk is None else risk
    admm = config.admm if admm is None else admm
    eps = bonferroni_split(risk, len(config.prosumers))
    agents = {
        pc.id: _Prosumer(assemble_local_problem(pc.id, config, train, amb, e, sigma=admm.sigma), config)
        for pc, e in zip(config.prosumers, eps)
    }
    edges = config.edges()
    state = AdmmState.zeros(edges, config.horizon, admm.sigma)
    bus = EdgeMailbox(edges)
    scale = max(len(edges), 1) if admm.scale_tol_by_edges else 1
    tol_p, tol_d = admm.tol_primal * scale, admm.tol_dual * scale

    workers = worker_count(admm.parallel)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    converged = False
    objective = float("nan")
    try:
        for _ in range(admm.max_iter):
            t0 = time.perf_counter()
            primal_update(state, agents, bus, pool)
            phat_prev = auxiliary_update(state)
            lam_prev = dual_update(state)
            state.k += 1
            primal, aux = compute_residuals(state, phat_prev)
            step = sum(float(np.linalg.norm(state.lam[e] - lam_prev[e])) for e in edges)
            objective = sum(prosumer_objective(a.schedule, a.pc, a.prices) for a in agents.values())
            state.trace.append(TraceRow(state.k, primal, aux, step, objective, time.perf_counter() - t0))
            log.debug("admm k=%d primal=%.3e aux=%.3e obj=%.6f", state.k, primal, aux, objective)
            if primal <= tol_p and aux <= tol_d:
                converged = True
                break
    finally:
        if pool:
            pool.shutdown()

    last = state.trace[-1]
    return CoordinationResult(
        schedules={pid: a.schedule for pid, a in agents.items()},
        converged=converged,
        iterations=state.k,
        primal_residual=last.primal_residual,
        aux_residual=last.aux_residual,
        objective=objective,
        trace=state.trace,
        state=state,
    )
