"""Discrete optimal transport between weighted point clouds.

Exact plans come from the transportation LP solved with HiGHS dual simplex,
which returns a vertex of the polytope. Entropic plans come from Sinkhorn
scaling, switched to log-domain updates when the regularization is small
relative to the costs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from ._netsimplex import network_simplex
from .errors import (
    DimensionMismatch,
    InfeasibleMarginals,
    NotPositiveDefinite,
    SinkhornNotConverged,
    ZeroRowWeight,
)


@dataclass
class TransportPlan:
    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost_value: float
    n_iter: int = 0
    converged: bool = True

    @property
    def marginal_violation(self) -> float:
        rows = np.abs(self.plan.sum(axis=1) - self.row_marginal).max()
        cols = np.abs(self.plan.sum(axis=0) - self.col_marginal).max()
        return float(max(rows, cols))


def _points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D point array, got shape {X.shape}")
    return X


def cost_matrix(X0, X1) -> np.ndarray:
    """Squared Euclidean distances; 1-D inputs are treated as columns."""
    X0, X1 = _points(X0), _points(X1)
    if X0.shape[1] != X1.shape[1]:
        raise DimensionMismatch(f"point dimensions differ: {X0.shape[1]} vs {X1.shape[1]}")
    diff = X0[:, None, :] - X1[None, :, :] if X0.shape[1] <= 4 else None
    if diff is not None:
        return np.einsum("ijk,ijk->ij", diff, diff)
    sq = (X0 * X0).sum(1)[:, None] + (X1 * X1).sum(1)[None, :] - 2 * X0 @ X1.T
    return np.maximum(sq, 0.0)


def _check_marginals(C: np.ndarray, w0, w1, tol: float = 1e-9):
    C = np.asarray(C, dtype=float)
    w0 = np.asarray(w0, dtype=float).ravel()
    w1 = np.asarray(w1, dtype=float).ravel()
    if C.shape != (w0.size, w1.size):
        raise DimensionMismatch(f"cost shape {C.shape} does not match marginals ({w0.size}, {w1.size})")
    if np.any(w0 < 0) or np.any(w1 < 0):
        raise InfeasibleMarginals("marginals must be nonnegative")
    if abs(w0.sum() - 1) > tol or abs(w1.sum() - 1) > tol:
        raise InfeasibleMarginals(f"marginals sum to {w0.sum():.12g} and {w1.sum():.12g}, expected 1")
    return C, w0, w1


def transport_lp(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """Optimal basic plan for ``min <P, cost>`` with row sums ``supply`` and column sums ``demand``.

    Solved by network simplex; HiGHS dual simplex is the fallback if the
    pivot budget runs out.
    """
    plan, _, optimal = network_simplex(cost, supply, demand)
    if optimal:
        return plan
    m, k = cost.shape
    idx = np.arange(m * k)
    A = sparse.vstack(
        [
            sparse.csr_matrix((np.ones(m * k), (idx // k, idx)), shape=(m, m * k)),
            sparse.csr_matrix((np.ones(m * k), (idx % k, idx)), shape=(k, m * k)),
        ]
    ).tocsr()
    # one equality is redundant; dropping it keeps the system full rank
    b = np.concatenate([supply, demand])
    res = linprog(cost.ravel(), A_eq=A[:-1], b_eq=b[:-1], bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise InfeasibleMarginals(f"transportation LP failed: {res.message}")
    return np.maximum(res.x.reshape(m, k), 0.0)


def solve_exact(C, w0, w1) -> TransportPlan:
    """Optimal vertex of the transportation polytope ``U(w0, w1)``."""
    C, w0, w1 = _check_marginals(C, w0, w1)
    rows, cols = np.flatnonzero(w0 > 0), np.flatnonzero(w1 > 0)
    m, k = rows.size, cols.size
    sub = C[np.ix_(rows, cols)]
    plan = np.zeros(C.shape)

    if m == 1 or k == 1:
        block = np.outer(w0[rows], w1[cols]) / (w0[rows].sum() * w1[cols].sum())
        plan[np.ix_(rows, cols)] = block
        return TransportPlan(plan, w0, w1, float((plan * C).sum()))

    supply = w0[rows]
    demand = w1[cols] * (supply.sum() / w1[cols].sum())
    block = transport_lp(sub, supply, demand)
    plan[np.ix_(rows, cols)] = block
    return TransportPlan(plan, w0, w1, float((block * sub).sum()))


def sinkhorn(
    C,
    w0,
    w1,
    gamma: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    log_domain: bool | None = None,
    kernel: np.ndarray | None = None,
) -> TransportPlan:
    """Entropic OT plan ``diag(u) K diag(v)`` with ``K = exp(-C / gamma)``.

    Iterates until the largest marginal violation is at most ``tol``. When
    ``max_iter`` is reached first, the iterate with the smallest violation is
    returned with ``converged=False`` and a :class:`SinkhornNotConverged`
    warning. ``log_domain=None`` picks log-domain updates when
    ``gamma < 0.05 * median(C)``. A precomputed ``kernel`` may be passed to
    skip the exponential in the standard domain.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    C, w0, w1 = _check_marginals(C, w0, w1)
    rows, cols = np.flatnonzero(w0 > 0), np.flatnonzero(w1 > 0)
    full = rows.size == C.shape[0] and cols.size == C.shape[1]
    sub = C if full else C[np.ix_(rows, cols)]
    a, b = w0[rows], w1[cols]
    if log_domain is None:
        log_domain = gamma < 0.05 * float(np.median(sub))

    if log_domain:
        block, n_iter, violation = _sinkhorn_log(sub, a, b, gamma, tol, max_iter)
    else:
        K = None
        if kernel is not None:
            K = kernel if full else kernel[np.ix_(rows, cols)]
        block, n_iter, violation = _sinkhorn_plain(sub, a, b, gamma, tol, max_iter, K)

    converged = violation <= tol
    if not converged:
        warnings.warn(
            f"Sinkhorn stopped after {n_iter} iterations with marginal violation {violation:.3g}",
            SinkhornNotConverged,
            stacklevel=2,
        )
    if full:
        plan = block
    else:
        plan = np.zeros(C.shape)
        plan[np.ix_(rows, cols)] = block
    return TransportPlan(plan, w0, w1, float((block * sub).sum()), n_iter, converged)


def _sinkhorn_plain(C, a, b, gamma, tol, max_iter, K=None):
    if K is None:
        K = np.exp(-C / gamma)
    v = np.ones_like(b)
    best = (np.inf, None, None)
    history = []
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for it in range(1, max_iter + 1):
            u = a / (K @ v)
            v = b / (K.T @ u)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))) or v.max() > 1e250:
                # kernel underflow; redo the whole solve in log space
                return _sinkhorn_log(C, a, b, gamma, tol, max_iter)
            violation = float(np.abs(u * (K @ v) - a).max())
            if violation < best[0]:
                best = (violation, u, v)
            if violation <= tol:
                break
            history.append(violation)
            if _stalled(history, tol, max_iter - it) and a.size + b.size <= NEWTON_MAX_SIZE:
                f, g = gamma * np.log(best[1]), gamma * np.log(best[2])
                return _newton_polish(C, a, b, gamma, tol, f, g, it)
    violation, u, v = best
    return u[:, None] * K * v[None, :], it, violation


def _sinkhorn_log(C, a, b, gamma, tol, max_iter):
    # epsilon scaling: warm-start the potentials (kept in cost units) on a
    # geometric ladder of larger regularizations, which avoids the very slow
    # early sweeps at tiny gamma
    log_a, log_b = np.log(a), np.log(b)
    F, G = np.zeros_like(a), np.zeros_like(b)
    spent = 0
    for stage_gamma in _gamma_ladder(C, gamma)[:-1]:
        M = -C / stage_gamma
        for _ in range(SCALING_SWEEPS):
            f = log_a - logsumexp(M + G[None, :] / stage_gamma, axis=1)
            G = stage_gamma * (log_b - logsumexp(M + f[:, None], axis=0))
        F = stage_gamma * f
        spent += SCALING_SWEEPS

    M = -C / gamma
    f, g = F / gamma, G / gamma
    best = (np.inf, f, g)
    history = []
    it = spent
    newton_tried = False
    for it in range(spent + 1, spent + max_iter + 1):
        f = log_a - logsumexp(M + g[None, :], axis=1)
        g = log_b - logsumexp(M + f[:, None], axis=0)
        row = np.exp(logsumexp(M + f[:, None] + g[None, :], axis=1))
        violation = float(np.abs(row - a).max())
        if violation < best[0]:
            best = (violation, f, g)
        if violation <= tol:
            break
        history.append(violation)
        if (not newton_tried and _stalled(history, tol, spent + max_iter - it)
                and a.size + b.size <= NEWTON_MAX_SIZE):
            newton_tried = True
            P, n_it, v = _newton_polish(C, a, b, gamma, tol, gamma * best[1], gamma * best[2], it)
            if v <= tol:
                return P, n_it, v
            # Newton could not finish (ill-conditioned at tiny gamma); keep sweeping
    violation, f, g = best
    return np.exp(M + f[:, None] + g[None, :]), it, violation


SCALING_SWEEPS = 50


def _gamma_ladder(C, gamma: float) -> list[float]:
    """Regularizations from the cost scale down to ``gamma`` by factors of 4."""
    top = float(C.max()) if C.size else gamma
    ladder = [gamma]
    while ladder[-1] * 4 < top:
        ladder.append(ladder[-1] * 4)
    return ladder[::-1]


# Newton on the dual is O((n0 + n1)^3); only worth it for moderate sizes.
NEWTON_MAX_SIZE = 1500
_STALL_WINDOW = 50


def _stalled(history: list, tol: float, remaining: int) -> bool:
    """True when the observed linear rate needs more than 1000 further sweeps."""
    if len(history) < 2 * _STALL_WINDOW or len(history) % _STALL_WINDOW:
        return False
    now, before = history[-1], history[-1 - _STALL_WINDOW]
    if now >= before:
        return True
    rate = np.log(now / before) / _STALL_WINDOW
    needed = np.log(tol / now) / rate
    return needed > min(1000, remaining)


def _newton_polish(C, a, b, gamma, tol, f, g, it, max_newton: int = 100):
    """Finish the solve with damped Newton ascent on the semi-dual in ``g``.

    Row potentials are eliminated exactly (rows always match ``a``), which
    keeps every iterate a valid plan. The last entry of ``g`` is pinned to
    remove the additive gauge freedom. ``f`` is accepted for symmetry with
    the Sinkhorn state but recomputed.
    """
    log_a = np.log(a)
    M = -C / gamma
    h = (g - g[-1]) / gamma

    def state(h):
        logits = M + h[None, :]
        lse = logsumexp(logits, axis=1)
        value = float(a @ (log_a - lse) + b @ h)
        P = np.exp(logits - lse[:, None] + log_a[:, None])
        return value, P

    value, P = state(h)
    violation = float(np.abs(P.sum(axis=0) - b).max())
    k = 0
    for k in range(1, max_newton + 1):
        col = P.sum(axis=0)
        violation = float(np.abs(col - b).max())
        if violation <= tol:
            break
        grad = (b - col)[:-1]
        H = np.diag(col) - P.T @ (P / a[:, None])
        H = H[:-1, :-1]
        try:
            step = np.linalg.solve(H + 1e-14 * np.eye(H.shape[0]), grad)
        except np.linalg.LinAlgError:
            break
        step = np.append(step, 0.0)
        t, accepted = 1.0, False
        while t > 1e-12:
            value_new, P_new = state(h + t * step)
            if np.isfinite(value_new) and value_new >= value - 1e-15 * abs(value):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        h, value, P = h + t * step, value_new, P_new
    violation = float(max(np.abs(P.sum(axis=0) - b).max(), np.abs(P.sum(axis=1) - a).max()))
    return P, it + k, violation


def barycentric_map(plan: TransportPlan | np.ndarray, X1, w0=None) -> np.ndarray:
    """Send source point ``i`` to ``sum_j P_ij x1_j / w0_i``."""
    P = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if w0 is None:
        w0 = plan.row_marginal if isinstance(plan, TransportPlan) else P.sum(axis=1)
    w0 = np.asarray(w0, dtype=float).ravel()
    X1 = _points(X1)
    if P.shape != (w0.size, X1.shape[0]):
        raise DimensionMismatch(f"plan shape {P.shape} does not match ({w0.size}, {X1.shape[0]})")
    zero = np.flatnonzero(w0 <= 0)
    if zero.size:
        raise ZeroRowWeight(f"source row {int(zero[0])} has zero weight")
    # normalizing rows first keeps a permutation row exactly one-hot
    return (P / w0[:, None]) @ X1


def entropic_gaussian_correlation(sigma0: float, sigma1: float, gamma: float) -> float:
    """Correlation of the entropic OT coupling between ``N(., sigma0^2)`` and ``N(., sigma1^2)``."""
    if sigma0 <= 0 or sigma1 <= 0:
        raise ValueError("standard deviations must be positive")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if gamma == 0:
        return 1.0
    s = sigma0 * sigma1
    q = gamma / 4.0
    # rationalized form of (sqrt(q^2 + s^2) - q) / s, stable for large gamma
    return float(s / (np.sqrt(q * q + s * s) + q))


def _sym_sqrt(S: np.ndarray, inverse: bool = False) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(0.5 * (S + S.T))
    eigval = np.clip(eigval, 0.0, None)
    root = np.sqrt(eigval)
    if inverse:
        root = 1.0 / root
    return (eigvec * root) @ eigvec.T


def _check_spd(S, name: str) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1]:
        raise NotPositiveDefinite(f"{name} is not square")
    if not np.allclose(S, S.T, atol=1e-10 * max(1.0, np.abs(S).max())):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    eigval = np.linalg.eigvalsh(0.5 * (S + S.T))
    if eigval.min() <= 1e-12 * max(1.0, eigval.max()):
        raise NotPositiveDefinite(f"{name} has smallest eigenvalue {eigval.min():.3g}")
    return 0.5 * (S + S.T)


def entropic_gaussian_cross_cov(Sigma0, Sigma1, gamma: float) -> np.ndarray:
    """Cross-covariance of the entropic OT coupling between centred Gaussians."""
    S0 = _check_spd(Sigma0, "Sigma0")
    S1 = _check_spd(Sigma1, "Sigma1")
    if S0.shape != S1.shape:
        raise DimensionMismatch(f"covariance shapes differ: {S0.shape} vs {S1.shape}")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    d = S0.shape[0]
    root0 = _sym_sqrt(S0)
    inner = 4.0 * root0 @ S1 @ root0 + (gamma * gamma / 4.0) * np.eye(d)
    return 0.5 * root0 @ _sym_sqrt(inner) @ _sym_sqrt(S0, inverse=True) - (gamma / 4.0) * np.eye(d)
