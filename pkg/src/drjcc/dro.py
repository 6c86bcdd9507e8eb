"""Finite convex reformulation of the two-stage distributionally robust problem.

Recourse is a linear decision rule ``q(xi) = Q xi``. Its worst-case expected
cost over the Wasserstein ball and the per-hour worst-case CVaR balance
constraints are written as linear constraints on auxiliary variables, so
every local and centralized problem is a convex QP.

Builders take a :class:`~drjcc.builder.QpBuilder` and a name prefix, add
variables and constraints, and return index layouts or value expressions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .builder import Expr, QpBuilder
from .config import AmbiguitySpec, CommunityConfig, ProsumerConfig, RiskSpec
from .qp import StandardQP, solve_qp, with_linear
from .scenarios import ProsumerScenarios, ScenarioSet


class ReformulationError(ValueError):
    pass


# ------------------------------------------------------------------ risk split

def bonferroni_split(risk: RiskSpec, N: int) -> np.ndarray:
    """Per-prosumer tolerances proportional to the weights, summing to epsilon."""
    weights = np.ones(N) if risk.weights is None else np.asarray(risk.weights, dtype=float)
    if len(weights) != N:
        raise ReformulationError(f"expected {N} weights, got {len(weights)}")
    if np.any(weights <= 0):
        raise ReformulationError("split weights must be positive")
    eps = risk.epsilon * weights / weights.sum()
    eps[-1] = risk.epsilon - eps[:-1].sum()
    return eps


def empirical_cvar(losses, eps: float) -> float:
    """Exact CVaR of the empirical distribution at level ``eps``.

    Mean of the worst ``eps`` fraction of samples, with the boundary sample
    weighted fractionally; equals ``min_b b + sum([x - b]_+) / (eps I)``.
    """
    x = np.sort(np.asarray(losses, dtype=float).ravel())[::-1]
    if x.size == 0:
        raise ValueError("empirical_cvar needs at least one sample")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    mass = eps * x.size
    full = int(np.floor(mass + 1e-12))
    total = x[:full].sum()
    if full < x.size:
        total += (mass - full) * x[full]
    return float(total / mass)


# ------------------------------------------------------------------ recourse

def recourse_mask(T: int, structure: str) -> np.ndarray:
    if structure == "diagonal":
        return np.eye(T, dtype=bool)
    if structure == "lower":
        return np.tril(np.ones((T, T), dtype=bool))
    if structure == "full":
        return np.ones((T, T), dtype=bool)
    raise ReformulationError(f"unknown recourse structure {structure!r}")


@dataclass(frozen=True, eq=False)
class RecourseRule:
    """Linear recourse ``q = Q xi`` with entries outside the structure exactly zero."""

    Q: np.ndarray
    structure: str = "diagonal"

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        mask = recourse_mask(Q.shape[0], self.structure)
        Q[~mask] = 0.0
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        return np.asarray(xi) @ self.Q.T


def add_recourse(b: QpBuilder, prefix: str, T: int, structure: str) -> np.ndarray:
    """Q variables; returns a (T, T) index matrix with -1 outside the structure."""
    mask = recourse_mask(T, structure)
    flat = b.var(f"{prefix}Q", int(mask.sum()))
    idx = -np.ones((T, T), dtype=np.int64)
    idx[mask] = flat
    return idx


def _linear_in_q(expr: Expr, Q: np.ndarray, weights: np.ndarray, rows) -> None:
    """expr[rows[r]] += sum_{t,j} weights[r, t, j] * Q[t, j] (structural entries only)."""
    t_idx, j_idx = np.nonzero(Q >= 0)
    cols = Q[t_idx, j_idx]
    rows = np.asarray(rows)
    for r, row in enumerate(rows):
        expr.add(cols, weights[r][t_idx, j_idx], np.full(len(cols), row))


def _single_entry_bounds(x: np.ndarray, q_min: float, q_max: float):
    """Interval for a scalar Q with q_min <= Q x_i <= q_max for all i, or None."""
    if np.any(x == 0) and not q_min <= 0 <= q_max:
        return None
    lo, hi = -np.inf, np.inf
    pos, neg = x[x > 0], x[x < 0]
    if pos.size:
        lo = max(lo, np.max(q_min / pos))
        hi = min(hi, np.min(q_max / pos))
    if neg.size:
        lo = max(lo, np.max(q_max / neg))
        hi = min(hi, np.min(q_min / neg))
    return lo, hi


def add_recourse_bounds(b: QpBuilder, Q: np.ndarray, xi: np.ndarray, q_min: float, q_max: float) -> None:
    """q_min <= (Q xi_i)_t <= q_max at every sample i and hour t.

    Rows of Q with a single free entry become plain variable bounds.
    """
    I, T = xi.shape
    Q = Q.copy()
    for t in range(T):
        (js,) = np.nonzero(Q[t] >= 0)
        if len(js) != 1:
            continue
        iv = _single_entry_bounds(xi[:, js[0]], q_min, q_max)
        if iv is None:
            continue
        if iv[0] > iv[1]:
            raise ReformulationError(f"recourse bounds cannot hold at hour {t}")
        b.bounds([Q[t, js[0]]], iv[0], iv[1])
        Q[t] = -1
    t_idx, j_idx = np.nonzero(Q >= 0)
    if len(t_idx) == 0:
        return
    cols = Q[t_idx, j_idx]
    rows = (np.arange(I)[:, None] * T + t_idx[None, :]).ravel()
    coef = xi[:, j_idx].ravel()
    if np.isfinite(q_max):
        b.le(Expr(I * T).add(np.tile(cols, I), coef, rows).add_const(-q_max))
    if np.isfinite(q_min):
        b.le(Expr(I * T).add(np.tile(cols, I), -coef, rows).add_const(q_min))


# ------------------------------------------------------- worst-case expectation

def build_worst_case_expectation(
    b: QpBuilder, prefix: str, Q: np.ndarray, c_q: np.ndarray, xi: np.ndarray, amb: AmbiguitySpec
) -> Expr:
    """Worst-case expected real-time cost ``sup E[c_q' Q xi]`` over the ball.

    Adds (lambda, s_i, gamma_i) and the constraints

        c_q' Q xi_i + gamma_i' (d - C xi_i) <= s_i
        || C' gamma_i - Q' c_q ||_inf <= lambda
        gamma_i >= 0, lambda >= 0

    and returns the scalar expression ``lambda rho + mean(s)``.
    """
    I, T = xi.shape
    c_q = np.asarray(c_q, dtype=float)
    if Q.shape != (T, T) or c_q.shape != (T,):
        raise ReformulationError(f"dimension mismatch: Q {Q.shape}, c_q {c_q.shape}, samples {xi.shape}")
    C, d = amb.C, amb.d
    k = C.shape[0]
    s = b.var(f"{prefix}wc/s", I)
    gamma = b.var(f"{prefix}wc/gamma", (I, k), lb=0.0) if k else None

    # epigraph rows: sum_{t,j} c_q[t] xi[i,j] Q[t,j] + gamma_i'(d - C xi_i) - s_i <= 0
    epi = Expr(I)
    weights = c_q[None, :, None] * xi[:, None, :]  # (I, T, T)
    _linear_in_q(epi, Q, weights, np.arange(I))
    if k:
        slack = d[None, :] - xi @ C.T  # (I, k)
        epi.add(gamma, slack.ravel(), np.repeat(np.arange(I), k))
    epi.add(s, -1.0)
    b.le(epi)

    value = Expr(1).add(s, 1.0 / I, np.zeros(I))
    if amb.rho == 0:
        return value

    lam = b.var(f"{prefix}wc/lambda", 1, lb=0.0)
    value.add(lam, amb.rho, [0])
    # gradient in xi of the recourse cost: (Q' c_q)_j = sum_t c_q[t] Q[t, j]
    cols_with_q = np.nonzero(np.any(Q >= 0, axis=0))[0]
    blocks = range(I) if k else [None]
    for i in blocks:
        js = np.arange(T) if k else cols_with_q
        for sign in (1.0, -1.0):
            row = Expr(len(js))
            w = np.zeros((len(js), T, T))
            for r, j in enumerate(js):
                w[r, :, j] = -sign * c_q
            _linear_in_q(row, Q, w, np.arange(len(js)))
            if k:
                # sign * (C' gamma_i)_j
                for r, j in enumerate(js):
                    row.add(gamma[i], sign * C[:, j], np.full(k, r))
            row.add(np.full(len(js), lam[0]), -1.0)
            b.le(row)
    return value


# ----------------------------------------------------------- CVaR constraints

def build_cvar_constraints(
    b: QpBuilder,
    prefix: str,
    supply: list,
    Q: np.ndarray,
    sc: ProsumerScenarios,
    amb: AmbiguitySpec,
    eps: float,
    as_constraint: bool = True,
) -> Expr:
    """Per-hour worst-case CVaR of the imbalance ``a_t' xi + b_t``.

    ``a_t`` is row t of ``D - Q`` and ``b_t = D_t mu_t - supply_t`` where
    ``supply`` lists ``(index array, coefficient)`` terms summing to
    ``p + pb - ps + Pe``. For every hour t the fragment adds

        tau_t <= s_ti
        a_t' xi_i + b_t + (eps - 1) tau_t + eps gamma_ti' (d - C xi_i) <= eps s_ti
        || eps C' gamma_ti - a_t ||_inf <= eps lambda_t
        gamma_ti >= 0, lambda_t >= 0

    The returned expression holds ``lambda_t rho + mean_i s_ti`` per hour,
    the worst-case CVaR of that hour's imbalance; with ``as_constraint`` it
    is also constrained to be nonpositive.
    """
    if not 0 < eps < 1:
        raise ReformulationError(f"eps must lie in (0, 1), got {eps}")
    xi = sc.normalized()
    I, T = xi.shape
    D, w = sc.scale, sc.nominal_net
    C, d = amb.C, amb.d
    k = C.shape[0]

    tau = b.var(f"{prefix}cvar/tau", T)
    s = b.var(f"{prefix}cvar/s", (T, I))
    gamma = b.var(f"{prefix}cvar/gamma", (T, I, k), lb=0.0) if k else None

    # tau_t - s_ti <= 0
    b.le(Expr(T * I).add(np.repeat(tau, I), 1.0).add(s.ravel(), -1.0))

    # imbalance rows, indexed t * I + i
    rows = np.arange(T * I).reshape(T, I)
    imb = Expr(T * I)
    imb.add_const((D[:, None] * xi.T + w[:, None]).ravel())
    qw = np.zeros((T * I, T, T))
    for t in range(T):
        qw[rows[t], t, :] = -xi  # -(Q xi_i)_t
    _linear_in_q(imb, Q, qw, np.arange(T * I))
    for idx, coef in supply:
        idx = np.asarray(idx)
        imb.add(np.repeat(idx, I), -coef, rows.ravel())
    imb.add(np.repeat(tau, I), eps - 1.0)
    if k:
        slack = d[None, :] - xi @ C.T  # (I, k)
        for t in range(T):
            imb.add(gamma[t].ravel(), eps * slack.ravel(), np.repeat(rows[t], k))
    imb.add(s.ravel(), -eps)
    b.le(imb)

    value = Expr(T).add(s.ravel(), 1.0 / I, np.repeat(np.arange(T), I))
    if amb.rho > 0:
        lam = b.var(f"{prefix}cvar/lambda", T, lb=0.0)
        value.add(lam, amb.rho)
        for t in range(T):
            # a_t[j] = D_t [j == t] - Q[t, j]
            js = np.arange(T) if k else np.union1d([t], np.nonzero(Q[t] >= 0)[0])
            blocks = range(I) if k else [None]
            for i in blocks:
                for sign in (1.0, -1.0):
                    # sign * (eps (C' gamma)_j - a_t[j]) - eps lambda_t <= 0
                    row = Expr(len(js))
                    for r, j in enumerate(js):
                        if Q[t, j] >= 0:
                            row.add([Q[t, j]], sign, [r])
                        if j == t:
                            row.add_const(-sign * D[t], [r])
                        if k:
                            row.add(gamma[t, i], sign * eps * C[:, j], np.full(k, r))
                    row.add(np.full(len(js), lam[t]), -eps)
                    b.le(row)
    if as_constraint:
        b.le(value)
    return value


# ----------------------------------------------------- deterministic dynamics

@dataclass
class ScheduleLayout:
    """Variable indices of one prosumer's decisions inside a QP."""

    T: int
    p: np.ndarray
    pb: np.ndarray
    ps: np.ndarray
    E: np.ndarray
    S: np.ndarray
    pe: dict = field(default_factory=dict)
    Q: np.ndarray = None
    structure: str = "diagonal"
    rt_value: Expr = None
    cvar_value: Expr = None

    def supply_terms(self) -> list:
        terms = [(self.p, 1.0), (self.pb, 1.0), (self.ps, -1.0)]
        terms += [(idx, 1.0) for idx in self.pe.values()]
        return terms


def build_deterministic_constraints(
    b: QpBuilder, prefix: str, pc: ProsumerConfig, T: int, dt: float, neighbors=None
) -> ScheduleLayout:
    """Decision variables with box bounds and the storage / load-shift recursions."""
    neighbors = pc.neighbors if neighbors is None else neighbors
    p = b.var(f"{prefix}p", T, lb=pc.p_min, ub=pc.p_max)
    pe = {m: b.var(f"{prefix}pe/{m}", T, lb=pc.pe_min, ub=pc.pe_max) for m in neighbors}
    pb = b.var(f"{prefix}pb", T, lb=pc.pb_min, ub=pc.pb_max)
    ps = b.var(f"{prefix}ps", T, lb=0.0, ub=pc.ps_max)
    E = b.var(f"{prefix}E", T + 1)
    S = b.var(f"{prefix}S", T + 1)

    b.bounds(E[:1], pc.E_init, pc.E_init)
    b.bounds(S[:1], pc.S_init, pc.S_init)
    b.bounds(E[1:], pc.E_min, pc.E_max)
    b.bounds(S[1:], pc.S_min, pc.S_max)
    if pc.E_final is not None:
        b.bounds(E[-1:], pc.E_final, pc.E_final)
    if pc.S_final is not None:
        b.bounds(S[-1:], pc.S_final, pc.S_final)
    # E_{t+1} = E_t + eta dt pb_t
    b.eq(Expr(T).add(E[1:]).add(E[:-1], -1.0).add(pb, -pc.eta * dt))
    # S_{t+1} = S_t + dt (ps_t - ps_ref_t)
    b.eq(Expr(T).add(S[1:]).add(S[:-1], -1.0).add(ps, -dt).add_const(dt * pc.ps_ref))
    return ScheduleLayout(T, p, pb, ps, E, S, pe)


def add_first_stage_cost(b: QpBuilder, lay: ScheduleLayout, pc: ProsumerConfig, prices, owner: str) -> None:
    """c_p'p + sum_m c_nm'p_nm + gamma_b ||pb||^2 + gamma_s ||S||^2."""
    b.linear(lay.p, prices.c_p)
    for m, idx in lay.pe.items():
        b.linear(idx, prices.p2p(owner, m))
    b.square(lay.pb, pc.gamma_b)
    b.square(lay.S[1:], pc.gamma_s)


def build_prosumer(
    b: QpBuilder,
    prefix: str,
    pc: ProsumerConfig,
    config: CommunityConfig,
    sc: ProsumerScenarios,
    amb: AmbiguitySpec,
    eps: float,
    neighbors=None,
) -> ScheduleLayout:
    """All variables, constraints and objective terms of one prosumer."""
    T = config.horizon
    xi = sc.normalized()
    lay = build_deterministic_constraints(b, prefix, pc, T, config.dt, neighbors)
    lay.structure = config.recourse
    lay.Q = add_recourse(b, prefix, T, config.recourse)
    add_recourse_bounds(b, lay.Q, xi, pc.q_min, pc.q_max)
    add_first_stage_cost(b, lay, pc, config.prices, pc.id)
    lay.rt_value = build_worst_case_expectation(b, prefix, lay.Q, config.prices.c_q, xi, amb)
    b.linear_expr(lay.rt_value)
    lay.cvar_value = build_cvar_constraints(b, prefix, lay.supply_terms(), lay.Q, sc, amb, eps)
    return lay


# ------------------------------------------------------------ schedules

@dataclass(frozen=True, eq=False)
class DecisionSchedule:
    p: np.ndarray
    pe: dict
    pb: np.ndarray
    ps: np.ndarray
    Q: RecourseRule
    E: np.ndarray
    S: np.ndarray
    worst_case_rt: float = 0.0

    @property
    def Pe(self) -> np.ndarray:
        total = np.zeros_like(self.p)
        for v in self.pe.values():
            total = total + v
        return total

    def supply(self, q: np.ndarray = 0.0) -> np.ndarray:
        """p + q + pb - ps + Pe."""
        return self.p + q + self.pb - self.ps + self.Pe


def extract_schedule(x: np.ndarray, lay: ScheduleLayout) -> DecisionSchedule:
    T = lay.T
    Q = np.zeros((T, T))
    mask = lay.Q >= 0
    Q[mask] = x[lay.Q[mask]]
    rt = float(lay.rt_value.evaluate(x)[0]) if lay.rt_value is not None else 0.0
    return DecisionSchedule(
        p=x[lay.p].copy(),
        pe={m: x[idx].copy() for m, idx in lay.pe.items()},
        pb=x[lay.pb].copy(),
        ps=x[lay.ps].copy(),
        Q=RecourseRule(Q, lay.structure),
        E=x[lay.E].copy(),
        S=x[lay.S].copy(),
        worst_case_rt=rt,
    )


def first_stage_cost(sched: DecisionSchedule, pc: ProsumerConfig, prices) -> float:
    cost = float(prices.c_p @ sched.p)
    for m, v in sched.pe.items():
        cost += float(prices.p2p(pc.id, m) @ v)
    cost += pc.gamma_b * float(sched.pb @ sched.pb) + pc.gamma_s * float(sched.S[1:] @ sched.S[1:])
    return cost


def prosumer_objective(sched: DecisionSchedule, pc: ProsumerConfig, prices) -> float:
    """Local cost J_n: first-stage and flexibility terms plus worst-case recourse cost."""
    return first_stage_cost(sched, pc, prices) + sched.worst_case_rt


# ------------------------------------------------------------ local problem

@dataclass
class LocalProblem:
    """A prosumer's QP with the consensus terms split out for cheap updates.

    The base QP carries ``sigma/2 ||p_nm||^2`` on every trade; the multiplier
    and auxiliary-dependent parts are linear and are swapped in by
    :meth:`with_consensus`.
    """

    pid: str
    qp: StandardQP
    layout: ScheduleLayout
    sigma: float

    def with_consensus(self, lam: dict, phat: dict) -> StandardQP:
        q = self.qp.q.copy()
        r = self.qp.r
        for m, idx in self.layout.pe.items():
            q[idx] += lam[m] - self.sigma * phat[m]
            r += 0.5 * self.sigma * float(phat[m] @ phat[m])
        return with_linear(self.qp, q, r)


def assemble_local_problem(
    pid: str,
    config: CommunityConfig,
    train: ScenarioSet,
    amb: AmbiguitySpec,
    eps_n: float,
    phat: dict = None,
    lam: dict = None,
    sigma: float = 0.0,
    neighbors=None,
) -> LocalProblem:
    """Prosumer ``pid``'s augmented-Lagrangian subproblem.

    With ``sigma = 0`` and zero multipliers this is the prosumer's standalone
    distributionally robust problem.
    """
    pc = config[pid]
    b = QpBuilder()
    lay = build_prosumer(b, "", pc, config, train[pid], amb, eps_n, neighbors)
    if sigma < 0:
        raise ReformulationError("sigma must be nonnegative")
    if sigma > 0:
        for idx in lay.pe.values():
            b.square(idx, 0.5 * sigma)
    local = LocalProblem(pid, b.build(), lay, sigma)
    if phat is not None or lam is not None:
        zeros = {m: np.zeros(config.horizon) for m in lay.pe}
        qp = local.with_consensus(lam or zeros, phat or zeros)
        local = LocalProblem(pid, qp, lay, sigma)
    return local


def assemble_centralized_problem(
    config: CommunityConfig, train: ScenarioSet, amb: AmbiguitySpec, risk: RiskSpec
):
    """Whole-community QP with explicit reciprocity ``p_nm + p_mn = 0``.

    Returns ``(qp, layouts)`` with one layout per prosumer id.
    """
    eps = bonferroni_split(risk, len(config.prosumers))
    b = QpBuilder()
    layouts = {}
    for pc, e in zip(config.prosumers, eps):
        layouts[pc.id] = build_prosumer(b, f"{pc.id}/", pc, config, train[pc.id], amb, e)
    for n, m in config.edges():
        if config.ids.index(n) < config.ids.index(m):
            b.eq(Expr(config.horizon).add(layouts[n].pe[m]).add(layouts[m].pe[n]))
    return b.build(), layouts


# ------------------------------------------------------- fixed-decision values

def worst_case_expectation_value(Q, c_q, xi, amb: AmbiguitySpec, tol: float = 1e-10) -> float:
    """Optimal value of the worst-case expectation fragment for a fixed Q."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    T = Q.shape[0]
    b = QpBuilder()
    Qidx = b.var("Q", (T, T))
    b.bounds(Qidx, Q.ravel(), Q.ravel())
    value = build_worst_case_expectation(b, "", Qidx, c_q, xi, amb)
    b.linear_expr(value)
    sol = solve_qp(b.build(), tol=tol)
    if not sol.optimal:
        raise ReformulationError(f"worst-case expectation solve failed: {sol.status.value}")
    return sol.objective


def worst_case_cvar_value(
    sc: ProsumerScenarios, supply, Q, amb: AmbiguitySpec, eps: float, tol: float = 1e-10
) -> np.ndarray:
    """Per-hour worst-case CVaR of the imbalance for fixed supply and recourse."""
    T = sc.horizon
    Q = np.zeros((T, T)) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    b = QpBuilder()
    u = b.var("supply", T)
    b.bounds(u, supply, supply)
    Qidx = b.var("Q", (T, T))
    b.bounds(Qidx, Q.ravel(), Q.ravel())
    value = build_cvar_constraints(b, "", [(u, 1.0)], Qidx, sc, amb, eps, as_constraint=False)
    b.linear_expr(value)
    sol = solve_qp(b.build(), tol=tol)
    if not sol.optimal:
        raise ReformulationError(f"CVaR fragment solve failed: {sol.status.value}")
    return value.evaluate(sol.x)
