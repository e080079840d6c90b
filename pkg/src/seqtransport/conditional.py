"""Kernel-weighted conditional transport of a numeric child given its parents."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AllWeightsZero, DegenerateCovariance, DegenerateWeights, DimensionMismatch
from .univariate import GaussianParams, WeightedDistribution, from_sorted_support


@dataclass(frozen=True)
class KernelConfig:
    """Kernel settings for conditional CDFs.

    Parameters
    ----------
    kernel : only ``"gaussian"`` is supported.
    bandwidths : one positive bandwidth per parent column, in the parent's
        own units. ``None`` means Silverman's rule computed per group.
    min_effective_weight : kernel weights below this fraction of the largest
        weight are set to zero before normalizing.
    exact_match : per parent column, whether it is a categorical code that
        must match the query exactly instead of being smoothed.
    """

    kernel: str = "gaussian"
    bandwidths: tuple[float, ...] | None = None
    min_effective_weight: float = 1e-10
    exact_match: tuple[bool, ...] | None = None

    def __post_init__(self):
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if self.bandwidths is not None:
            bw = tuple(float(b) for b in np.atleast_1d(self.bandwidths))
            if any(not np.isfinite(b) or b <= 0 for b in bw):
                raise ValueError("bandwidths must be positive")
            object.__setattr__(self, "bandwidths", bw)
        if not 0 < self.min_effective_weight <= 1:
            raise ValueError("min_effective_weight must lie in (0, 1]")
        if self.exact_match is not None:
            object.__setattr__(self, "exact_match", tuple(bool(e) for e in self.exact_match))


def silverman_bandwidths(rows: np.ndarray) -> np.ndarray:
    """``1.06 * sd * n^(-1/5)`` per column; constant columns fall back to 1."""
    rows = np.atleast_2d(rows)
    n = rows.shape[0]
    sd = rows.std(axis=0, ddof=1) if n > 1 else np.zeros(rows.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    return 1.06 * sd * n ** (-0.2)


def _as_rows(parent_rows, n: int | None = None) -> np.ndarray:
    rows = np.asarray(parent_rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1) if n is None or rows.size == n else rows.reshape(n, -1)
    return rows


class KernelSample:
    """A group's child values and parent rows, prepared for repeated queries.

    Sorting the child values once lets each query reduce to a weighted
    ``bincount`` over the unique values.
    """

    def __init__(self, child, parent_rows, cfg: KernelConfig):
        child = np.asarray(child, dtype=float).ravel()
        if child.size == 0:
            raise AllWeightsZero("group has no observations")
        rows = _as_rows(parent_rows, child.size)
        if rows.shape[0] != child.size:
            raise DimensionMismatch(f"{child.size} child values but {rows.shape[0]} parent rows")
        p = rows.shape[1]
        exact = np.zeros(p, dtype=bool) if cfg.exact_match is None else np.asarray(cfg.exact_match, dtype=bool)
        if exact.size != p:
            raise DimensionMismatch(f"exact_match has {exact.size} entries for {p} parents")
        if cfg.bandwidths is None:
            bw = silverman_bandwidths(rows) if p else np.ones(0)
        else:
            bw = np.asarray(cfg.bandwidths, dtype=float)
            if bw.size == 1 and p > 1:
                bw = np.repeat(bw, p)
            if bw.size != p:
                raise DimensionMismatch(f"{bw.size} bandwidths for {p} parents")
        self.cfg = cfg
        self.smooth = ~exact
        self.exact = exact
        self.bandwidths = bw
        self.rows = rows
        self.scaled = rows[:, self.smooth] / bw[self.smooth]
        self.values, self.inverse = np.unique(child, return_inverse=True)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def weights(self, query, bandwidth_scale: float = 1.0) -> np.ndarray:
        query = np.atleast_1d(np.asarray(query, dtype=float))
        if query.size != self.rows.shape[1]:
            raise DimensionMismatch(f"query has {query.size} coordinates, rows have {self.rows.shape[1]}")
        if query.size == 0:
            return np.full(self.n, 1.0 / self.n)
        diff = (self.scaled - query[self.smooth] / self.bandwidths[self.smooth]) / bandwidth_scale
        logw = -0.5 * np.einsum("ij,ij->i", diff, diff)
        if self.exact.any():
            match = np.all(self.rows[:, self.exact] == query[self.exact], axis=1)
            logw = np.where(match, logw, -np.inf)
        top = logw.max()
        if not np.isfinite(top):
            raise AllWeightsZero("no parent row matches the categorical part of the query")
        w = np.exp(logw - top)
        w[w < self.cfg.min_effective_weight] = 0.0
        w /= w.sum()
        ess = 1.0 / float(np.dot(w, w))
        floor = min(2.0, 0.5 * self.n)
        if ess < floor:
            raise DegenerateWeights(f"effective sample size {ess:.3g} is below {floor:g}", ess)
        return w

    def distribution(self, query, bandwidth_scale: float = 1.0) -> WeightedDistribution:
        w = self.weights(query, bandwidth_scale)
        pooled = np.bincount(self.inverse, weights=w, minlength=self.values.size)
        return from_sorted_support(self.values, pooled)


def kernel_weights(parent_rows, query, cfg: KernelConfig | None = None) -> np.ndarray:
    """Normalized Gaussian kernel weights of each row around ``query``."""
    cfg = cfg or KernelConfig()
    rows = _as_rows(parent_rows)
    if rows.shape[0] == 0:
        raise AllWeightsZero("no rows to weight")
    return KernelSample(np.zeros(rows.shape[0]), rows, cfg).weights(query)


def transport_with(
    x: float,
    z0,
    z1,
    source: KernelSample,
    target: KernelSample,
    bandwidth_scale: float = 1.0,
    diagnostics: Counter | None = None,
) -> float:
    """Core of :func:`conditional_transport` on prepared samples."""
    f0 = source.distribution(z0, bandwidth_scale)
    f1 = target.distribution(z1, bandwidth_scale)
    u, clamped = f0.level(x)
    if diagnostics is not None and clamped:
        diagnostics["clamped"] += clamped
    return float(np.interp(u[0], f1.knots, f1.values))


def conditional_transport(
    x: float,
    z0: Sequence[float],
    z1: Sequence[float],
    group0: tuple,
    group1: tuple,
    cfg: KernelConfig | None = None,
) -> float:
    """Evaluate ``Q1(F0(x | z0) | z1)`` from kernel-weighted group samples.

    ``group0`` and ``group1`` are ``(child_values, parent_rows)`` pairs. With
    default bandwidths each group gets its own Silverman bandwidth.
    """
    cfg = cfg or KernelConfig()
    source = KernelSample(group0[0], group0[1], cfg)
    target = KernelSample(group1[0], group1[1], cfg)
    return transport_with(x, z0, z1, source, target)


def _conditional_moments(p: GaussianParams, x1: float) -> tuple[float, float]:
    if p.mean.size != 2:
        raise DimensionMismatch("expected bivariate Gaussian parameters")
    s1, s2 = p.sd
    if s1 <= 0 or s2 <= 0:
        raise DegenerateCovariance("zero marginal variance")
    rho = p.covariance[0, 1] / (s1 * s2)
    if 1 - rho * rho <= 1e-14:
        raise DegenerateCovariance(f"correlation {rho:.6g} makes the conditional law degenerate")
    mean = p.mean[1] + rho * (s2 / s1) * (x1 - p.mean[0])
    return mean, s2 * np.sqrt(1 - rho * rho)


def gaussian_conditional_map(p0: GaussianParams, p1: GaussianParams, x2, x1, x1_dagger):
    """Monotone map of ``x2 | x1`` under ``p0`` onto ``x2 | x1_dagger`` under ``p1``."""
    m0, s0 = _conditional_moments(p0, x1)
    m1, s1 = _conditional_moments(p1, x1_dagger)
    return m1 + (s1 / s0) * (np.asarray(x2, dtype=float) - m0)
