"""Weighted empirical CDF/quantile pairs and the monotone map ``Q_target(F_source(x))``.

The CDF is piecewise linear between knots placed at the middle of each
atom's probability step: the k-th distinct value ``v_k`` sits at level
``C_{k-1} + w_k / 2`` where ``C`` is the cumulative weight. This keeps the
CDF strictly increasing on the sample range and makes the quantile its exact
piecewise-linear inverse.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import AllWeightsZero, DegenerateSource, EmptySample


@dataclass(frozen=True)
class WeightedDistribution:
    """Distinct sorted support points with normalized weights.

    Attributes
    ----------
    values : strictly increasing support points.
    weights : positive weights summing to one.
    knots : CDF level attached to each support point (midpoint convention).
    n_eff : Kish effective sample size ``1 / sum(w**2)``.
    """

    values: np.ndarray
    weights: np.ndarray
    knots: np.ndarray = field(repr=False)
    n_eff: float

    @property
    def u_min(self) -> float:
        return 0.5 / self.n_eff

    def cdf(self, x):
        """F(x): 0 below the sample, 1 at or above the maximum, interpolated inside."""
        x = np.asarray(x, dtype=float)
        u = np.interp(x, self.values, self.knots)
        u = np.where(x < self.values[0], 0.0, u)
        u = np.where(x >= self.values[-1], 1.0, u)
        return u if u.ndim else float(u)

    def quantile(self, u):
        """Q(u), the inverse of the knot interpolation, flat beyond the end knots."""
        out = np.interp(np.asarray(u, dtype=float), self.knots, self.values)
        return out if np.ndim(out) else float(out)

    def level(self, x) -> tuple[np.ndarray, int]:
        """Transport level of ``x`` and the number of points clamped.

        Inside the sample range this is the knot interpolation. Outside it the
        level is held in ``[u_min, 1 - u_min]`` with ``u_min = 1 / (2 n_eff)``.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.interp(x, self.values, self.knots)
        outside = (x < self.values[0]) | (x > self.values[-1])
        u = np.clip(u, self.u_min, 1.0 - self.u_min) if self.values.size > 1 else u
        return u, int(outside.sum())


def fit_weighted_distribution(sample, weights=None) -> WeightedDistribution:
    """Build a :class:`WeightedDistribution`; duplicate values pool their weight."""
    sample = np.asarray(sample, dtype=float).ravel()
    if sample.size == 0:
        raise EmptySample("cannot fit a distribution to an empty sample")
    if weights is None:
        weights = np.ones_like(sample)
    else:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != sample.shape:
            raise ValueError(f"got {sample.size} values but {weights.size} weights")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
    if not np.all(np.isfinite(sample)):
        raise ValueError("sample contains non-finite values")
    keep = weights > 0
    if not keep.any():
        raise AllWeightsZero("all weights are zero")
    values, inverse = np.unique(sample[keep], return_inverse=True)
    pooled = np.bincount(inverse, weights=weights[keep], minlength=values.size)
    return from_sorted_support(values, pooled)


def from_sorted_support(values: np.ndarray, weights: np.ndarray) -> WeightedDistribution:
    """Fast path for callers that already hold unique sorted values.

    Zero-weight atoms are dropped; ``weights`` need not be normalized.
    """
    keep = weights > 0
    if not keep.all():
        values, weights = values[keep], weights[keep]
    total = weights.sum()
    if values.size == 0 or total <= 0:
        raise AllWeightsZero("all weights are zero")
    w = weights / total
    cum = np.cumsum(w)
    knots = cum - 0.5 * w
    n_eff = 1.0 / float(np.dot(w, w))
    return WeightedDistribution(values, w, knots, n_eff)


def monotone_transport(
    source: WeightedDistribution,
    target: WeightedDistribution,
    x,
    diagnostics: Counter | None = None,
):
    """Map ``x`` through ``Q_target(F_source(x))``.

    Accepts scalars or arrays. Points outside the source range are clamped
    (see :meth:`WeightedDistribution.level`) and tallied under
    ``diagnostics["clamped"]`` when a counter is supplied.
    """
    scalar = np.ndim(x) == 0
    u, n_clamped = source.level(x)
    if diagnostics is not None and n_clamped:
        diagnostics["clamped"] += n_clamped
    out = np.interp(u, target.knots, target.values)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class GaussianParams:
    """Mean vector and covariance of a (possibly 1-D) Gaussian law."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        eigval, eigvec = np.linalg.eigh(cov)
        if eigval.min() < -1e-12:
            raise ValueError(f"covariance has negative eigenvalue {eigval.min():.3g}")
        if eigval.min() < 0:
            cov = (eigvec * np.clip(eigval, 0, None)) @ eigvec.T
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def univariate(cls, mean: float, sd: float) -> "GaussianParams":
        return cls(np.array([mean]), np.array([[sd * sd]]))

    @classmethod
    def bivariate(cls, means, sds, rho: float) -> "GaussianParams":
        s1, s2 = sds
        cov = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
        return cls(np.asarray(means, dtype=float), cov)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def gaussian_affine_map(p0: GaussianParams, p1: GaussianParams, x):
    """Monotone map between 1-D Gaussians: ``m1 + (s1 / s0) (x - m0)``."""
    s0 = float(p0.sd[0])
    if s0 == 0:
        raise DegenerateSource("source standard deviation is zero")
    return p1.mean[0] + (float(p1.sd[0]) / s0) * (np.asarray(x, dtype=float) - p0.mean[0])
