import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optagg import InvalidInput, Rng, Unsupported
from optagg.metrics import GramMatrix
from optagg.qp import (QProblem, SolverConfig, brute_force_lattice, grid_oracle, kkt_residual,
                       project_simplex, solve)


def psd(rng, k, rank=None):
    A = rng.normal((rank or k) * k).reshape(rank or k, k)
    return A.T @ A


def projection_oracle(v):
    # minimum distance over every support's equality-constrained projection
    k = v.shape[0]
    best, best_d = None, np.inf
    for r in range(1, k + 1):
        for S in itertools.combinations(range(k), r):
            S = list(S)
            w = np.zeros(k)
            w[S] = v[S] - (v[S].sum() - 1.0) / r
            if w.min() < 0:
                continue
            d = float(np.sum((w - v) ** 2))
            if d < best_d:
                best, best_d = w, d
    return best


def test_projection_examples():
    w = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_simplex(w).omega, w, atol=1e-15)
    assert project_simplex([10, 0, 0]).omega.tolist() == [1, 0, 0]
    with pytest.raises(InvalidInput):
        project_simplex([np.nan, 1])
    with pytest.raises(InvalidInput):
        project_simplex([])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.floats(0.1, 10))
def test_projection_matches_support_enumeration(seed, k, scale):
    v = scale * Rng(seed).normal(k)
    np.testing.assert_allclose(project_simplex(v).omega, projection_oracle(v), atol=1e-10)


def test_solve_closed_forms():
    s = solve(QProblem((np.eye(2),)))
    np.testing.assert_allclose(s.omega.omega, [0.5, 0.5], atol=1e-12)
    assert s.objective == pytest.approx(0.5, abs=1e-12) and s.converged
    s = solve(QProblem((np.diag([1.0, 4.0]),)))
    np.testing.assert_allclose(s.omega.omega, [0.8, 0.2], atol=1e-10)
    assert s.objective == pytest.approx(0.8, abs=1e-12)
    assert s.kkt_residual <= 1e-6


def test_kkt_examples():
    assert kkt_residual(np.eye(2), [0.5, 0.5]) == 0
    assert kkt_residual(np.diag([1.0, 4.0]), [0.8, 0.2]) == pytest.approx(0, abs=1e-15)
    Q = psd(Rng(3), 4)
    opt = solve(QProblem((Q,))).omega.omega
    direction = np.array([1.0, -1.0, 0.0, 0.0]) if opt[1] > 0.05 else np.array([1.0, 0.0, 0.0, -1.0])
    direction = direction if opt[np.argmin(direction)] > 0.05 else -direction
    res = [kkt_residual(Q, opt + t * direction) for t in (0.0, 0.01, 0.02, 0.04)]
    assert all(a < b for a, b in zip(res, res[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_solver_matches_grid_oracle(seed):
    Q = psd(Rng(seed), 4)
    s = solve(QProblem((Q,)))
    _, grid_obj = grid_oracle(Q, 1e-3)
    assert s.converged
    assert abs(s.objective - grid_obj) <= 5e-6 * max(1.0, grid_obj)
    assert grid_obj >= s.objective - 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_grid_oracle_agrees_with_brute_force(seed):
    rng = Rng(100 + seed)
    k = 2 + seed % 3
    Q = psd(rng, k, rank=max(1, k - seed % 2))
    w_fast, f_fast = grid_oracle(Q, 0.02)
    w_slow, f_slow = brute_force_lattice(Q, 0.02)
    assert f_fast == pytest.approx(f_slow, rel=1e-12, abs=1e-15)
    assert w_fast @ Q @ w_fast == pytest.approx(f_fast, rel=1e-12)


def test_grid_oracle_examples():
    w, f = grid_oracle(np.eye(3), 1e-3)
    assert f == pytest.approx(1 / 3, abs=1e-6)
    np.testing.assert_allclose(w, 1 / 3, atol=1e-3)
    w, f = grid_oracle(np.diag([1e-6, 50.0, 80.0, 90.0]), 1e-3)
    assert w.tolist() == [1, 0, 0, 0]
    with pytest.raises(Unsupported):
        grid_oracle(np.eye(5))
    with pytest.raises(InvalidInput):
        grid_oracle(np.eye(2), 1e-4)


def test_solver_errors_and_degenerate():
    with pytest.raises(InvalidInput):
        solve(QProblem((np.array([[1.0, 0.5], [0.0, 1.0]]),)))
    with pytest.raises(InvalidInput):
        solve(QProblem((np.array([[np.inf]]),)))
    with pytest.raises(InvalidInput):
        SolverConfig(tol_kkt=0)
    s = solve(QProblem((np.zeros((3, 3)),)))
    np.testing.assert_allclose(s.omega.omega, 1 / 3)
    assert s.objective == 0 and s.converged
    s = solve(QProblem((np.array([[2.5]]),)))
    assert s.omega.omega.tolist() == [1.0] and s.objective == 2.5


def test_nonconvergence_is_reported():
    Q = psd(Rng(7), 4)
    s = solve(QProblem((Q,)), SolverConfig(max_iters=1, polish_every=1000))
    assert s.iterations == 1
    assert s.converged == (s.kkt_residual <= 1e-6)


def test_combined_problem_and_gram_input():
    A, B = psd(Rng(1), 3), psd(Rng(2), 3)
    prob = QProblem((GramMatrix.from_matrix(A), GramMatrix.from_matrix(B)), (0.3, 0.7))
    np.testing.assert_allclose(prob.Q, 0.3 * A + 0.7 * B)
    assert solve(prob).objective == pytest.approx(solve(QProblem((0.3 * A + 0.7 * B,))).objective,
                                                  rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_solver_properties(seed, k, rank):
    rng = Rng(seed)
    Q = psd(rng, k, rank)
    s = solve(QProblem((Q,)))
    assert s.objective <= np.min(np.diag(Q)) + 1e-9
    assert s.omega.omega @ Q @ s.omega.omega == pytest.approx(s.objective, rel=1e-12, abs=1e-15)
    assert all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(s.history, s.history[1:]))
    perm = np.argsort(rng.random(k))
    sp = solve(QProblem((Q[np.ix_(perm, perm)],)))
    assert abs(sp.objective - s.objective) <= 1e-12 * max(1.0, s.objective)
    if rank >= k:
        np.testing.assert_allclose(sp.omega.omega, s.omega.omega[perm], atol=1e-8)


def test_duplicated_column_never_hurts():
    rng = Rng(9)
    G = rng.normal(30).reshape(10, 3)
    Q = G.T @ G / 10
    G2 = np.column_stack([G, G[:, 1]])
    Q2 = G2.T @ G2 / 10
    assert solve(QProblem((Q2,))).objective <= solve(QProblem((Q,))).objective + 1e-12


def test_fault_injection_breaks_certificates():
    Q = psd(Rng(4), 4)
    bad = solve(QProblem((Q,)), SolverConfig(step_scale=1e3, max_iters=200))
    _, grid_obj = grid_oracle(Q, 1e-3)
    assert bad.objective - grid_obj > 5e-6 or bad.kkt_residual > 1e-6
