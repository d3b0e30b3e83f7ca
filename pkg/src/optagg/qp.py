"""Minimize ``omega' Q omega`` over the probability simplex.

The solver is projected gradient with a fixed ``1/L`` step from the uniform
point.  Every ``polish_every`` iterations it also tries the exact
minimizer on the current support (a small KKT linear system) and keeps it
only if it is feasible and no worse, so the objective sequence never
increases.  :func:`grid_oracle` is an independent exhaustive check.
"""
from dataclasses import dataclass, field

import numpy as np

from .core import SimplexWeights
from .errors import InvalidInput, Unsupported
from .metrics import GramMatrix

SUPPORT_EPS = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    tol_objective: float = 1e-10
    tol_kkt: float = 1e-6
    max_iters: int = 20000
    power_iters: int = 50
    lipschitz_safety: float = 1.01
    polish_every: int = 25
    # >1 deliberately breaks the step rule; used for fault injection only
    step_scale: float = 1.0

    def __post_init__(self):
        if not (self.tol_objective > 0 and self.tol_kkt > 0 and self.max_iters > 0):
            raise InvalidInput("solver tolerances and iteration cap must be positive")


@dataclass(frozen=True)
class QProblem:
    """A simplex QP; several Gram matrices may be combined with weights ``lambdas``."""

    grams: tuple
    lambdas: tuple = None

    @property
    def Q(self):
        lambdas = self.lambdas or (1.0,) * len(self.grams)
        return sum(lam * _as_matrix(g) for lam, g in zip(lambdas, self.grams))


@dataclass(frozen=True, eq=False)
class Solution:
    omega: SimplexWeights
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _as_matrix(Q):
    if isinstance(Q, GramMatrix):
        return Q.Q
    if isinstance(Q, QProblem):
        return Q.Q
    return np.asarray(Q, dtype=np.float64)


def _project(v):
    v = np.asarray(v, dtype=np.float64)
    k = v.shape[0]
    order = np.lexsort((np.arange(k), -v))
    u = v[order]
    css = np.cumsum(u)
    j = np.arange(1, k + 1)
    rho = np.nonzero(u - (css - 1.0) / j > 0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(v - tau, 0.0)


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise InvalidInput("projection needs a finite, non-empty vector")
    return SimplexWeights(_project(v))


def kkt_residual(Q, omega):
    """Optimality residual: spread of the gradient ``2 Q omega`` over the support."""
    Q = _as_matrix(Q)
    w = np.asarray(omega, dtype=np.float64)
    g = 2.0 * Q @ w
    mu = g.min()
    support = w > SUPPORT_EPS
    spread = float(np.max(g[support] - mu)) if support.any() else 0.0
    return max(spread, float(np.max(np.maximum(mu - g, 0.0))))


def lipschitz_estimate(Q, iters=50, safety=1.01):
    """Power-iteration estimate of the gradient Lipschitz constant ``2 lambda_max(Q)``."""
    k = Q.shape[0]
    v = np.full(k, 1.0 / np.sqrt(k))
    lam = 0.0
    for _ in range(iters):
        y = Q @ v
        norm = np.linalg.norm(y)
        if norm == 0:
            break
        lam = float(v @ y)
        v = y / norm
    lam = max(lam, float(v @ Q @ v), float(np.max(np.diag(Q))))
    return max(2.0 * lam * safety, 1e-12)


def _polish(Q, w):
    """Exact minimizer restricted to the support of ``w``, or None if infeasible."""
    support = np.nonzero(w > SUPPORT_EPS)[0]
    s = support.shape[0]
    A = np.zeros((s + 1, s + 1))
    A[:s, :s] = 2.0 * Q[np.ix_(support, support)]
    A[:s, s] = 1.0
    A[s, :s] = 1.0
    rhs = np.zeros(s + 1)
    rhs[s] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    ws = sol[:s]
    if ws.min() < 0 or abs(ws.sum() - 1.0) > 1e-9:
        return None
    out = np.zeros_like(w)
    out[support] = ws
    return out / out.sum()


def solve(problem, config=None):
    """Projected-gradient solution of ``min_{omega in simplex} omega' Q omega``."""
    config = config or SolverConfig()
    Q = _as_matrix(problem)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        raise InvalidInput("Q must be a non-empty square matrix")
    if not np.all(np.isfinite(Q)):
        raise InvalidInput("Q must be finite")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.max(np.abs(Q - Q.T)) > 1e-9 * scale:
        raise InvalidInput("Q is not symmetric")
    Q = 0.5 * (Q + Q.T)
    k = Q.shape[0]
    w = np.full(k, 1.0 / k)
    if not np.any(Q):
        return Solution(SimplexWeights(w), 0.0, 0.0, 0, True, [0.0])

    L = lipschitz_estimate(Q, config.power_iters, config.lipschitz_safety)
    step = config.step_scale / L
    f = float(w @ Q @ w)
    history = [f]
    it = 0
    converged = False
    while it < config.max_iters:
        it += 1
        w_new = _project(w - step * (2.0 * Q @ w))
        f_new = float(w_new @ Q @ w_new)
        decrease = (f - f_new) / max(abs(f), 1e-300)
        w, f = w_new, f_new
        if it % config.polish_every == 0 or decrease < config.tol_objective:
            cand = _polish(Q, w)
            if cand is not None:
                f_cand = float(cand @ Q @ cand)
                if f_cand <= f:
                    w, f = cand, f_cand
        history.append(f)
        if decrease < config.tol_objective and kkt_residual(Q, w) <= config.tol_kkt:
            converged = True
            break
    kkt = kkt_residual(Q, w)
    converged = converged or kkt <= config.tol_kkt
    omega = SimplexWeights(w)
    return Solution(omega, float(omega.omega @ Q @ omega.omega), kkt, it, converged, history)


def _lattice(k, n):
    if k == 1:
        return np.array([[n]])
    rows = []
    for first in range(n, -1, -1):
        for rest in _lattice(k - 1, n - first):
            rows.append([first, *rest])
    return np.array(rows)


def grid_oracle(Q, resolution=1e-3):
    """Best point of the simplex lattice with spacing ``resolution`` (k <= 4).

    The last two coordinates share a fixed budget along which the objective
    is a convex parabola, so for each prefix the best lattice point is
    among the rounded vertex and the two ends; every lattice point is
    still covered.
    """
    Q = _as_matrix(Q)
    k = Q.shape[0]
    if k > 4:
        raise Unsupported("grid oracle supports k <= 4")
    if resolution < 1e-3:
        raise InvalidInput("grid resolution must be >= 1e-3")
    n = int(round(1.0 / resolution))
    if k == 1:
        return np.array([1.0]), float(Q[0, 0])
    if k == 2:
        prefixes = np.zeros((1, 0), dtype=np.int64)
    else:
        grids = np.meshgrid(*[np.arange(n + 1)] * (k - 2), indexing="ij")
        prefixes = np.stack([g.ravel() for g in grids], axis=1)
        prefixes = prefixes[prefixes.sum(axis=1) <= n]
    budget = n - prefixes.sum(axis=1)
    u = np.zeros((prefixes.shape[0], k))
    u[:, : k - 2] = prefixes
    u[:, k - 1] = budget
    u /= n
    v = np.zeros(k)
    v[k - 2], v[k - 1] = 1.0 / n, -1.0 / n
    uQ = u @ Q
    const = np.einsum("ij,ij->i", uQ, u)
    lin = 2.0 * (uQ @ v)
    quad = float(v @ Q @ v)
    if quad > 0:
        vertex = -lin / (2.0 * quad)
    else:
        vertex = np.zeros_like(lin)
    cands = np.stack([np.zeros_like(budget), budget,
                      np.clip(np.floor(vertex), 0, budget), np.clip(np.ceil(vertex), 0, budget)], axis=1)
    vals = const[:, None] + lin[:, None] * cands + quad * cands**2
    best_c = np.argmin(vals, axis=1)
    best_vals = vals[np.arange(vals.shape[0]), best_c]
    row = int(np.argmin(best_vals))
    c = cands[row, best_c[row]]
    omega = u[row] + c * v
    omega[k - 2] = c / n
    omega[k - 1] = (budget[row] - c) / n
    return omega, float(omega @ Q @ omega)


def brute_force_lattice(Q, resolution):
    """Plain enumeration of every lattice point; only for coarse resolutions."""
    Q = _as_matrix(Q)
    n = int(round(1.0 / resolution))
    pts = _lattice(Q.shape[0], n) / n
    vals = np.einsum("ij,jk,ik->i", pts, Q, pts)
    i = int(np.argmin(vals))
    return pts[i], float(vals[i])
