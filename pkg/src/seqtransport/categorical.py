"""Categorical mediators as points on the probability simplex.

Level indices are 0-based throughout: level ``k`` is the vertex ``e_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp, softmax

from .discrete import barycentric_map, cost_matrix, sinkhorn, transport_lp
from .errors import DimensionMismatch, RankDeficientPredictors, SeparationDetected

COEF_NORM_CAP = 30.0


def check_simplex_points(points, atol: float = 1e-9) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(P < -atol) or np.any(np.abs(P.sum(axis=1) - 1) > atol):
        raise ValueError("rows must be nonnegative and sum to one")
    return P


def renormalize(points) -> np.ndarray:
    """Clip tiny negatives and rescale rows to sum exactly to one."""
    P = np.clip(np.atleast_2d(np.asarray(points, dtype=float)), 0.0, None)
    return P / P.sum(axis=1, keepdims=True)


def argmax_label(p) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    return int(np.argmax(np.asarray(p, dtype=float)))


@dataclass(frozen=True)
class ClassProbModel:
    """Softmax model over ``n_levels`` levels.

    ``coef[k]`` holds ``(intercept, slopes...)`` on the original predictor
    scale for each modelled level; ``reference`` is the level whose logit is
    fixed at zero. Levels that were never observed during fitting get
    probability zero.
    """

    n_levels: int
    modelled: tuple[int, ...]
    reference: int
    coef: np.ndarray
    n_predictors: int

    def logits(self, X) -> np.ndarray:
        X = self._design(X)
        out = np.full((X.shape[0], self.n_levels), -np.inf)
        out[:, self.reference] = 0.0
        if self.modelled:
            out[:, list(self.modelled)] = X @ self.coef.T
        return out

    def predict_proba(self, X) -> np.ndarray:
        logits = self.logits(X)
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))

    def _design(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.n_predictors) if self.n_predictors else X.reshape(-1, 0)
        if X.shape[1] != self.n_predictors:
            raise DimensionMismatch(f"expected {self.n_predictors} predictors, got {X.shape[1]}")
        return np.hstack([np.ones((X.shape[0], 1)), X])


def fit_multinomial_logit(
    labels,
    predictors=None,
    n_levels: int | None = None,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> ClassProbModel:
    """Maximum-likelihood multinomial logit fitted by Newton's method.

    The last observed level is the reference. Predictors are standardized
    internally and the returned coefficients are mapped back to the original
    scale. A fit whose standardized coefficient norm passes
    ``COEF_NORM_CAP`` is reported as separation.

    Parameters
    ----------
    labels : integer level codes in ``[0, n_levels)``.
    predictors : ``(n, p)`` array; ``None`` or ``p = 0`` fits intercepts only.
    n_levels : number of declared levels (defaults to ``max(labels) + 1``).
    """
    y = np.asarray(labels).astype(int).ravel()
    n = y.size
    if n == 0:
        raise ValueError("no observations")
    X = np.zeros((n, 0)) if predictors is None else np.asarray(predictors, dtype=float)
    if X.ndim == 1:
        X = X.reshape(n, -1)
    if X.shape[0] != n:
        raise DimensionMismatch(f"{n} labels but {X.shape[0]} predictor rows")
    K = int(n_levels if n_levels is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= K:
        raise ValueError("labels out of range")
    observed = np.unique(y)
    if observed.size < 2:
        raise ValueError("need at least two observed levels")
    p = X.shape[1]

    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    if np.any(sd <= 1e-12 * np.maximum(1.0, np.abs(mean))):
        raise RankDeficientPredictors("a predictor column is constant")
    Z = np.hstack([np.ones((n, 1)), (X - mean) / sd])
    if np.linalg.matrix_rank(Z) < p + 1:
        raise RankDeficientPredictors("predictor columns are linearly dependent")

    reference = int(observed[-1])
    modelled = [int(k) for k in observed[:-1]]
    m = len(modelled)
    Y = (y[:, None] == np.array(modelled)[None, :]).astype(float)
    d = p + 1
    beta = np.zeros((m, d))

    def loglik(beta):
        eta = np.hstack([Z @ beta.T, np.zeros((n, 1))])
        return float((Y * eta[:, :m]).sum() - logsumexp(eta, axis=1).sum())

    current = loglik(beta)
    for _ in range(max_iter):
        eta = np.hstack([Z @ beta.T, np.zeros((n, 1))])
        prob = softmax(eta, axis=1)[:, :m]
        grad = ((Y - prob).T @ Z).ravel()
        H = np.empty((m * d, m * d))
        for a in range(m):
            for b in range(a, m):
                w = prob[:, a] * ((a == b) - prob[:, b])
                block = (Z * w[:, None]).T @ Z
                H[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
                H[b * d:(b + 1) * d, a * d:(a + 1) * d] = block
        try:
            step = np.linalg.solve(H, grad).reshape(m, d)
        except np.linalg.LinAlgError:
            raise SeparationDetected("information matrix became singular") from None
        t = 1.0
        while t > 1e-8:
            candidate = beta + t * step
            value = loglik(candidate)
            if value >= current - 1e-12 * abs(current):
                break
            t *= 0.5
        beta, previous, current = candidate, current, value
        if np.linalg.norm(beta) > COEF_NORM_CAP:
            raise SeparationDetected(
                f"coefficient norm exceeded {COEF_NORM_CAP:g}; the likelihood looks unbounded"
            )
        if np.abs(t * step).max() < 1e-8 or abs(current - previous) <= tol * (1 + abs(current)):
            break

    slopes = beta[:, 1:] / sd
    intercept = beta[:, 0] - slopes @ mean
    coef = np.hstack([intercept[:, None], slopes])
    return ClassProbModel(K, tuple(modelled), reference, coef, p)


def constant_model(labels, n_levels: int, n_predictors: int = 0) -> ClassProbModel:
    """Intercept-only model reproducing empirical frequencies (any number of levels)."""
    y = np.asarray(labels).astype(int).ravel()
    freq = np.bincount(y, minlength=n_levels) / y.size
    observed = np.flatnonzero(freq > 0)
    reference = int(observed[-1])
    modelled = tuple(int(k) for k in observed[:-1])
    coef = np.zeros((len(modelled), n_predictors + 1))
    coef[:, 0] = np.log(freq[list(modelled)] / freq[reference])
    return ClassProbModel(n_levels, modelled, reference, coef, n_predictors)


def transport_simplex_points(
    source_points,
    target_points,
    w0=None,
    w1=None,
    gamma: float = 0.01,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Entropic OT between simplex clouds followed by barycentric projection."""
    S = check_simplex_points(source_points)
    T = check_simplex_points(target_points)
    if S.shape[1] != T.shape[1]:
        raise DimensionMismatch(f"source has {S.shape[1]} levels, target has {T.shape[1]}")
    w0 = np.full(S.shape[0], 1.0 / S.shape[0]) if w0 is None else np.asarray(w0, dtype=float)
    w1 = np.full(T.shape[0], 1.0 / T.shape[0]) if w1 is None else np.asarray(w1, dtype=float)
    plan = sinkhorn(cost_matrix(S, T), w0, w1, gamma, tol=tol, max_iter=max_iter)
    out = np.zeros_like(S)
    keep = w0 > 0
    out[keep] = barycentric_map(plan.plan[keep], T, w0[keep])
    out[~keep] = S[~keep]
    return renormalize(out)


def largest_remainder_counts(proportions, n: int) -> np.ndarray:
    """Integer counts summing to ``n`` closest to ``n * proportions``.

    Leftover units go to the largest fractional parts, lowest index first
    among equal remainders.
    """
    pi = np.asarray(proportions, dtype=float)
    if np.any(pi < 0) or pi.sum() <= 0:
        raise ValueError("proportions must be nonnegative with positive sum")
    pi = pi / pi.sum()
    exact = n * pi
    counts = np.floor(exact + 1e-12).astype(int)
    short = n - counts.sum()
    remainder = exact - counts
    order = np.lexsort((np.arange(pi.size), -np.round(remainder, 12)))
    counts[order[:short]] += 1
    return counts


def allocate_to_vertices(points, target_proportions, weights=None, prefer=None) -> np.ndarray:
    """Assign each simplex point to a vertex under target label proportions.

    Uniform case (``weights=None``): label counts equal the largest-remainder
    rounding of ``n * target_proportions`` and the total squared distance to
    the assigned vertices is minimal among such labelings.

    Weighted case: points carry masses ``weights``; the finite transportation
    problem towards ``target_proportions`` is solved and each point takes the
    vertex holding its largest share of mass.

    ``prefer`` optionally gives a label per point used only to break exact
    cost ties in its favour.
    """
    P = check_simplex_points(points, atol=1e-6)
    n, K = P.shape
    pi = np.asarray(target_proportions, dtype=float).ravel()
    if pi.size != K:
        raise DimensionMismatch(f"{pi.size} proportions for {K} levels")
    # ||p - e_k||^2 = ||p||^2 - 2 p_k + 1; the first and last terms do not depend on k
    cost = -2.0 * P
    if prefer is not None:
        prefer = np.asarray(prefer).astype(int)
        cost = cost + 1e-6 * (np.arange(K)[None, :] != prefer[:, None])

    if weights is None:
        counts = largest_remainder_counts(pi, n)
        active = np.flatnonzero(counts > 0)
        if active.size == 1:
            return np.full(n, active[0])
        flow = transport_lp(cost[:, active], np.ones(n), counts[active].astype(float))
        labels = active[np.argmax(flow, axis=1)]
        if np.array_equal(np.bincount(labels, minlength=K), counts):
            return labels
        # non-integral vertex (should not happen): solve the expanded assignment
        columns = np.repeat(np.arange(K), counts)
        _, assigned = linear_sum_assignment(cost[:, columns])
        return columns[assigned]

    w = np.asarray(weights, dtype=float).ravel()
    if w.size != n:
        raise DimensionMismatch(f"{w.size} weights for {n} points")
    pi = pi / pi.sum()
    w = w / w.sum()
    labels = np.argmax(P, axis=1)
    keep = w > 0
    active = np.flatnonzero(pi > 0)
    if active.size == 1:
        labels[keep] = active[0]
        return labels
    flow = transport_lp(cost[np.ix_(keep, active)], w[keep], pi[active])
    labels[keep] = active[np.argmax(flow, axis=1)]
    return labels
