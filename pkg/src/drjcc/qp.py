"""
Convex quadratic programming.

Problems have the form

    minimize    0.5 x'Px + q'x + r
    subject to  A_eq x  = b_eq
                A_in x <= b_in

and are solved with a primal-dual interior point method (Mehrotra
predictor-corrector) on the reduced, regularized KKT system. Solutions are
certified by :func:`kkt_residuals`; a problem the method cannot solve is
classified with explicit certificates (a phase-one LP for infeasibility, a
recession-direction LP for unboundedness).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

CERTIFICATE_TOL = 1e-8
SYMMETRY_TOL = 1e-9
DENSE_LIMIT = 200


class MalformedProblemError(ValueError):
    """Raised for dimension mismatches or a non-convex quadratic term."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class StandardQP:
    """Solver-agnostic convex QP.

    ``names`` maps a symbol (e.g. ``"p"`` or ``"p2/pe/p3"``) to the array of
    variable indices that hold it.
    """

    P: sp.csc_matrix
    q: np.ndarray
    r: float = 0.0
    A_eq: sp.csr_matrix = None
    b_eq: np.ndarray = None
    A_in: sp.csr_matrix = None
    b_in: np.ndarray = None
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.q)
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "P", sp.csc_matrix(self.P, dtype=float))
        if self.A_eq is None:
            object.__setattr__(self, "A_eq", sp.csr_matrix((0, n)))
            object.__setattr__(self, "b_eq", np.zeros(0))
        if self.A_in is None:
            object.__setattr__(self, "A_in", sp.csr_matrix((0, n)))
            object.__setattr__(self, "b_in", np.zeros(0))
        object.__setattr__(self, "A_eq", sp.csr_matrix(self.A_eq, dtype=float))
        object.__setattr__(self, "A_in", sp.csr_matrix(self.A_in, dtype=float))
        object.__setattr__(self, "b_eq", np.asarray(self.b_eq, dtype=float).ravel())
        object.__setattr__(self, "b_in", np.asarray(self.b_in, dtype=float).ravel())
        if self.P.shape != (n, n):
            raise MalformedProblemError(f"P has shape {self.P.shape}, expected {(n, n)}")
        for A, b, label in ((self.A_eq, self.b_eq, "equality"), (self.A_in, self.b_in, "inequality")):
            if A.shape[1] != n or A.shape[0] != len(b):
                raise MalformedProblemError(
                    f"{label} block has shape {A.shape} with {len(b)} right-hand sides for {n} variables"
                )

    @property
    def n(self) -> int:
        return len(self.q)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.r)

    def var(self, x: np.ndarray, name: str) -> np.ndarray:
        """Values of symbol ``name`` in the primal vector ``x``."""
        return x[self.names[name]]


@dataclass(frozen=True)
class KktResiduals:
    """Infinity-norm KKT residuals of a primal-dual point."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)

    def within(self, tol: float) -> bool:
        return self.max() <= tol


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    eq_duals: np.ndarray
    in_duals: np.ndarray
    objective: float
    status: Status
    kkt: KktResiduals
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def kkt_residuals(qp: StandardQP, sol: QpSolution) -> KktResiduals:
    """Stationarity, primal feasibility, dual feasibility and complementarity."""
    return _residuals(qp, sol.x, sol.eq_duals, sol.in_duals)


def _residuals(qp, x, y, z) -> KktResiduals:
    grad = qp.P @ x + qp.q + qp.A_eq.T @ y + qp.A_in.T @ z
    slack = qp.A_in @ x - qp.b_in
    primal = max(_inf_norm(qp.A_eq @ x - qp.b_eq), float(np.max(slack, initial=0.0)))
    dual = max(0.0, -float(np.min(z, initial=0.0)))
    comp = _inf_norm(z * slack)
    return KktResiduals(_inf_norm(grad), primal, dual, comp)


def check_convexity(qp: StandardQP) -> None:
    P = qp.P
    asym = abs(P - P.T)
    if asym.nnz and asym.max() > SYMMETRY_TOL:
        raise MalformedProblemError(f"quadratic matrix is not symmetric (max asymmetry {asym.max():.3g})")
    offdiag = P - sp.diags(P.diagonal())
    offdiag.eliminate_zeros()
    if offdiag.nnz == 0:
        lowest = float(P.diagonal().min(initial=0.0))
    elif P.shape[0] <= 2000:
        lowest = float(np.linalg.eigvalsh(P.toarray())[0])
    else:
        lowest = float(spla.eigsh(P, k=1, which="SA", return_eigenvectors=False)[0])
    if lowest < -SYMMETRY_TOL:
        raise MalformedProblemError(f"quadratic matrix is indefinite (min eigenvalue {lowest:.3g})")


class _KktSystem:
    """Factorization of [[H, A'], [A, -delta I]] with H = P + G'WG + delta I."""

    def __init__(self, P, A, G, w, delta, AT=None, GT=None):
        n, m = P.shape[0], A.shape[0]
        self.n, self.m, self.delta = n, m, delta
        AT = A.T if AT is None else AT
        GT = G.T if GT is None else GT
        H = P + GT @ sp.diags(w) @ G
        self._H0 = H
        self._A, self._AT = A, AT
        K = sp.bmat(
            [[H + delta * sp.eye(n), AT], [A, -delta * sp.eye(m)]], format="csc"
        )
        if n + m <= DENSE_LIMIT:
            self._lu = sla.lu_factor(K.toarray(), check_finite=False)
            self._solve = lambda rhs: sla.lu_solve(self._lu, rhs, check_finite=False)
        else:
            # symmetric ordering suits the quasi-definite structure
            lu = spla.splu(
                K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01, options={"SymmetricMode": True}
            )
            self._solve = lu.solve

    def solve(self, r1, r2, refine=2):
        rhs = np.concatenate([r1, r2])
        sol = self._solve(rhs)
        # refine against the unregularized system
        for _ in range(refine):
            dx, dy = sol[: self.n], sol[self.n :]
            res = rhs - np.concatenate(
                [self._H0 @ dx + self._AT @ dy, self._A @ dx]
            )
            sol = sol + self._solve(res)
        return sol[: self.n], sol[self.n :]


def _step_length(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _interior_point(qp: StandardQP, tol: float, max_iter: int):
    """Run the IPM; returns (x, y, z, converged, iterations)."""
    P, q, A, b, G, h = qp.P, qp.q, qp.A_eq, qp.b_eq, qp.A_in, qp.b_in
    n, m, p = qp.n, len(b), len(h)
    delta = 1e-10
    AT, GT = A.T.tocsr(), G.T.tocsr()

    # initial point: regularized least-squares solve with unit slacks
    sys0 = _KktSystem(P, A, G, np.ones(p), 1e-8, AT, GT)
    x, y = sys0.solve(-q + GT @ h, b)
    s = h - G @ x
    s = np.maximum(s, 1.0) if p else s
    z = np.ones(p)

    best = (x, y, z, np.inf)
    last_improvement = 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + AT @ y + GT @ z
        rp = A @ x - b
        rg = G @ x + s - h
        mu = float(s @ z) / p if p else 0.0

        res = _residuals(qp, x, y, z)
        score = res.max()
        if score < 0.5 * best[3]:
            last_improvement = it
        if score < best[3]:
            best = (x.copy(), y.copy(), z.copy(), score)
        if score <= tol:
            return x, y, z, True, it
        if it - last_improvement > 30:
            break
        if not np.all(np.isfinite(x)) or _inf_norm(x) > 1e12 or _inf_norm(z) > 1e12:
            break

        w = z / s
        try:
            kkt = _KktSystem(P, A, G, w, delta, AT, GT)
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            delta *= 100
            if delta > 1e-4:
                break
            continue

        def direction(rc):
            r1 = -rd + GT @ ((rc - z * rg) / s)
            dx, dy = kkt.solve(r1, -rp)
            ds = -rg - G @ dx
            dz = (-rc - z * ds) / s
            return dx, dy, ds, dz

        # predictor
        dx, dy, ds, dz = direction(s * z)
        if p:
            a_aff = min(_step_length(s, ds), _step_length(z, dz))
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / p
            centering = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            dx, dy, ds, dz = direction(s * z + ds * dz - centering * mu)
            alpha = min(1.0, 0.99 * min(_step_length(s, ds), _step_length(z, dz)))
        else:
            alpha = 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        if p:
            np.maximum(s, 1e-300, out=s)
            np.maximum(z, 1e-300, out=z)
    return best[0], best[1], best[2], False, max_iter


def _phase_one(qp: StandardQP) -> StandardQP:
    """Feasibility LP: min sum(u) + sum(v) + w  s.t.  Ax + u - v = b, Gx - w <= h."""
    n, m, p = qp.n, len(qp.b_eq), len(qp.b_in)
    nv = n + 2 * m + 1
    c = np.concatenate([np.zeros(n), np.ones(2 * m + 1)])
    A = sp.hstack([qp.A_eq, sp.eye(m), -sp.eye(m), sp.csr_matrix((m, 1))])
    G_main = sp.hstack([qp.A_in, sp.csr_matrix((p, 2 * m)), -np.ones((p, 1))])
    G_pos = sp.hstack([sp.csr_matrix((2 * m + 1, n)), -sp.eye(2 * m + 1)])
    G = sp.vstack([G_main, G_pos])
    h = np.concatenate([qp.b_in, np.zeros(2 * m + 1)])
    return StandardQP(sp.csc_matrix((nv, nv)), c, 0.0, A, qp.b_eq, G, h)


def _recession(qp: StandardQP) -> StandardQP:
    """Direction LP: min q'd  s.t.  Pd = 0, A d = 0, G d <= 0, -1 <= d <= 1."""
    n = qp.n
    A = sp.vstack([qp.P, qp.A_eq])
    G = sp.vstack([qp.A_in, sp.eye(n), -sp.eye(n)])
    h = np.concatenate([np.zeros(len(qp.b_in)), np.ones(2 * n)])
    return StandardQP(sp.csc_matrix((n, n)), qp.q, 0.0, A, np.zeros(A.shape[0]), G, h)


def _classify_failure(qp: StandardQP, tol: float) -> Status:
    x, y, z, ok, _ = _interior_point(_phase_one(qp), 1e-10, 200)
    scale = 1.0 + max(_inf_norm(qp.b_eq), _inf_norm(qp.b_in))
    if ok:
        violation = _phase_one(qp).objective(x)
        if violation > CERTIFICATE_TOL * scale:
            return Status.INFEASIBLE
    x, y, z, ok, _ = _interior_point(_recession(qp), 1e-10, 200)
    if ok and qp.q @ x < -CERTIFICATE_TOL:
        return Status.UNBOUNDED
    return Status.MAX_ITER


def solve_qp(qp: StandardQP, tol: float = 1e-8, max_iter: int = 100) -> QpSolution:
    """Solve ``qp`` to KKT tolerance ``tol``.

    Returns a solution with ``status`` optimal only when every KKT residual
    is at most ``tol``. Infeasible and unbounded problems are recognised by
    certificate LPs; otherwise ``max_iter`` is reported with the best iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    check_convexity(qp)
    x, y, z, ok, iters = _interior_point(qp, tol, max_iter)
    kkt = _residuals(qp, x, y, z)
    if ok:
        status = Status.OPTIMAL
    else:
        status = _classify_failure(qp, tol)
    return QpSolution(x, y, z, qp.objective(x), status, kkt, iters)


def dump_triplets(qp: StandardQP, path) -> None:
    """Write ``qp`` as sparse triplets for cross-checking with other solvers.

    Sections start with a header line ``<name> <rows> <cols> <nnz>`` followed
    by ``row col value`` lines; vectors use ``<name> <len>`` and one value per
    line. Section order: P, q, r, A_eq, b_eq, A_in, b_in.
    """
    with open(path, "w") as fh:
        def mat(name, M):
            M = sp.coo_matrix(M)
            fh.write(f"{name} {M.shape[0]} {M.shape[1]} {M.nnz}\n")
            for i, j, v in zip(M.row, M.col, M.data):
                fh.write(f"{i} {j} {v:.17g}\n")

        def vec(name, v):
            fh.write(f"{name} {len(v)}\n")
            for val in v:
                fh.write(f"{val:.17g}\n")

        mat("P", qp.P)
        vec("q", qp.q)
        vec("r", [qp.r])
        mat("A_eq", qp.A_eq)
        vec("b_eq", qp.b_eq)
        mat("A_in", qp.A_in)
        vec("b_in", qp.b_in)


def load_triplets(path) -> StandardQP:
    """Inverse of :func:`dump_triplets`."""
    with open(path) as fh:
        lines = iter(fh.read().splitlines())

    def mat():
        _, r, c, nnz = next(lines).split()
        rows, cols, vals = [], [], []
        for _ in range(int(nnz)):
            i, j, v = next(lines).split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
        return sp.coo_matrix((vals, (rows, cols)), shape=(int(r), int(c)))

    def vec():
        _, k = next(lines).split()
        return np.array([float(next(lines)) for _ in range(int(k))])

    P, q, r = mat(), vec(), vec()
    A_eq, b_eq, A_in, b_in = mat(), vec(), mat(), vec()
    return StandardQP(P, q, float(r[0]), A_eq, b_eq, A_in, b_in)


def with_linear(qp: StandardQP, q: np.ndarray, r: float) -> StandardQP:
    """Same problem with a new linear term and constant."""
    return replace(qp, q=np.asarray(q, dtype=float), r=float(r))
