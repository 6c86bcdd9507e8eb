import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from drjcc.qp import (
    MalformedProblemError,
    QpSolution,
    StandardQP,
    Status,
    dump_triplets,
    kkt_residuals,
    load_triplets,
    solve_qp,
)
from oracles import enumerate_active_sets, equality_qp, inequality_qp


def box_qp(P, q, lo, hi):
    n = len(q)
    G = sp.vstack([sp.eye(n), -sp.eye(n)])
    return StandardQP(sp.csc_matrix(np.atleast_2d(P)), q, A_in=G, b_in=np.concatenate([hi, -np.asarray(lo)]))


def test_clamped_scalar():
    # (x - 2)^2 = x^2 - 4x + 4 on [0, 1]
    qp = box_qp([[2.0]], np.array([-4.0]), [0.0], [1.0])
    qp = StandardQP(qp.P, qp.q, 4.0, A_in=qp.A_in, b_in=qp.b_in)
    sol = solve_qp(qp)
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


def test_symmetric_equality():
    qp = StandardQP(2 * sp.eye(2), np.zeros(2), A_eq=np.ones((1, 2)), b_eq=[1.0])
    sol = solve_qp(qp)
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-8)
    assert sol.objective == pytest.approx(0.5, abs=1e-8)


def test_infeasible_bounds():
    # x >= 1 and x <= 0
    qp = StandardQP(sp.eye(1), np.zeros(1), A_in=np.array([[-1.0], [1.0]]), b_in=[-1.0, 0.0])
    assert solve_qp(qp).status is Status.INFEASIBLE


def test_infeasible_equalities():
    qp = StandardQP(sp.eye(2), np.zeros(2), A_eq=np.array([[1.0, 1.0], [1.0, 1.0]]), b_eq=[0.0, 1.0])
    assert solve_qp(qp).status is Status.INFEASIBLE


def test_unbounded_linear_direction():
    # minimize -x subject to y = 0 with x free
    qp = StandardQP(sp.diags([0.0, 1.0]), np.array([-1.0, 0.0]), A_eq=np.array([[0.0, 1.0]]), b_eq=[0.0])
    assert solve_qp(qp).status is Status.UNBOUNDED


def test_unbounded_halfline():
    # minimize -x subject to x >= 0
    qp = StandardQP(sp.csc_matrix((1, 1)), np.array([-1.0]), A_in=np.array([[-1.0]]), b_in=[0.0])
    assert solve_qp(qp).status is Status.UNBOUNDED


def test_five_variables_two_equalities(rng):
    qp, x, val = equality_qp(rng, 5, 2)
    sol = solve_qp(qp)
    np.testing.assert_allclose(sol.x, x, atol=1e-6)
    assert sol.objective == pytest.approx(val, abs=1e-6)


def test_indefinite_rejected():
    qp = StandardQP(sp.diags([1.0, -1.0]), np.zeros(2))
    with pytest.raises(MalformedProblemError):
        solve_qp(qp)


def test_asymmetric_rejected():
    qp = StandardQP(sp.csc_matrix(np.array([[1.0, 1.0], [0.0, 1.0]])), np.zeros(2))
    with pytest.raises(MalformedProblemError):
        solve_qp(qp)


def test_dimension_mismatch():
    with pytest.raises(MalformedProblemError):
        StandardQP(sp.eye(2), np.zeros(3))
    with pytest.raises(MalformedProblemError):
        StandardQP(sp.eye(2), np.zeros(2), A_eq=np.ones((1, 2)), b_eq=[1.0, 2.0])


def test_bad_tolerance():
    with pytest.raises(ValueError):
        solve_qp(StandardQP(sp.eye(1), np.zeros(1)), tol=0.0)


def test_max_iter_reports_best_iterate(rng):
    qp = inequality_qp(rng, 8, 12)
    sol = solve_qp(qp, max_iter=1)
    assert sol.status is Status.MAX_ITER
    assert sol.x.shape == (8,)


def test_residuals_zero_at_exact_solution():
    qp = StandardQP(2 * sp.eye(2), np.zeros(2), A_eq=np.ones((1, 2)), b_eq=[1.0])
    # stationarity: x + y_eq = 0 at x = 0.5
    exact = QpSolution(np.array([0.5, 0.5]), np.array([-1.0]), np.zeros(0), 0.5, Status.OPTIMAL, None)
    assert kkt_residuals(qp, exact).max() <= 1e-12


def test_unconstrained_minimum_stationarity():
    P = np.array([[3.0, 1.0], [1.0, 2.0]])
    q = np.array([1.0, -1.0])
    x = np.linalg.solve(P, -q)
    qp = StandardQP(sp.csc_matrix(P), q)
    res = kkt_residuals(qp, QpSolution(x, np.zeros(0), np.zeros(0), 0.0, Status.OPTIMAL, None))
    assert res.stationarity == pytest.approx(np.max(np.abs(P @ x + q)), abs=1e-15)
    assert res.stationarity <= 1e-12


def test_perturbation_detected(rng):
    qp, x, _ = equality_qp(rng, 6, 0)
    bumped = x + 1e-3 * rng.normal(size=6)
    res = kkt_residuals(qp, QpSolution(bumped, np.zeros(0), np.zeros(0), 0.0, Status.OPTIMAL, None))
    assert res.stationarity > 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 6), m=st.integers(1, 6))
def test_matches_active_set_enumeration(seed, n, m):
    rng = np.random.default_rng(seed)
    qp = inequality_qp(rng, n, m)
    sol = solve_qp(qp)
    assert sol.optimal
    assert sol.kkt.within(1e-8)
    assert np.all(sol.in_duals >= 0)
    _, val = enumerate_active_sets(qp)
    assert sol.objective == pytest.approx(val, rel=1e-6, abs=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(0.01, 100.0))
def test_argmin_invariant_to_objective_scaling(seed, c):
    rng = np.random.default_rng(seed)
    qp = inequality_qp(rng, 5, 4)
    scaled = StandardQP(qp.P * c, qp.q * c, A_in=qp.A_in, b_in=qp.b_in)
    a, b = solve_qp(qp), solve_qp(scaled)
    np.testing.assert_allclose(a.x, b.x, atol=1e-6)


def test_deterministic(rng):
    qp = inequality_qp(rng, 10, 15)
    a, b = solve_qp(qp), solve_qp(qp)
    assert np.array_equal(a.x, b.x)


def test_triplet_round_trip(tmp_path, rng):
    qp = inequality_qp(rng, 4, 3)
    qp = StandardQP(qp.P, qp.q, 1.5, np.ones((1, 4)), [0.3], qp.A_in, qp.b_in)
    path = tmp_path / "qp.txt"
    dump_triplets(qp, path)
    back = load_triplets(path)
    for name in ("P", "A_eq", "A_in"):
        assert abs(getattr(qp, name) - getattr(back, name)).max() == 0
    for name in ("q", "b_eq", "b_in"):
        assert np.array_equal(getattr(qp, name), getattr(back, name))
    assert back.r == 1.5
    assert solve_qp(back).objective == pytest.approx(solve_qp(qp).objective, abs=1e-10)
