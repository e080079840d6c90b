"""Seeded synthetic data generators and the Monte Carlo replication harness.

Randomness comes from Philox counter-based generators. Each draw uses its
own named stream derived from ``(seed, stream)``, so a replication never
depends on how many numbers another replication consumed, and replications
can run in any order or process.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .dag import DagSpec
from .data import CATEGORICAL, NUMERIC, Dataset

log = logging.getLogger(__name__)

STREAMS = {"treatment": 0, "mediators": 1, "categorical": 2, "outcome": 3}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named stream of one seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GaussianToyConfig:
    """Two correlated Gaussian mediators with a linear Gaussian outcome.

    ``n0`` fixes the untreated count; otherwise each unit is untreated with
    probability ``p0``.
    """

    n: int = 500
    p0: float = 0.5
    alpha: float = 1.0
    mu0: float = -1.0
    mu1: float = 1.0
    r0: float = -0.5
    r1: float = 0.7
    coefs: tuple[float, float, float] = (2.0, -1.5, 3.0)
    noise_sd: float = 1.0
    seed: int = 0
    n0: int | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0 < self.p0 < 1:
            raise ValueError("p0 must lie in (0, 1)")
        if abs(self.r0) >= 1 or abs(self.r1) >= 1:
            raise ValueError("correlations must lie in (-1, 1)")
        if self.n0 is not None and not 1 <= self.n0 <= self.n - 1:
            raise ValueError("n0 must leave both groups nonempty")

    def group_params(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        mu = self.alpha * (self.mu1 if a else self.mu0)
        r = self.r1 if a else self.r0
        return np.array([mu, mu]), np.array([[1.0, r], [r, 1.0]])

    @property
    def theoretical_effects(self) -> dict:
        """Population averages for the 0 -> 1 direction."""
        b1, b2, b3 = self.coefs
        shift = self.alpha * (self.mu1 - self.mu0)
        delta = (b1 + b2) * shift
        return {"delta_bar": delta, "zeta_bar": b3, "tau_bar": delta + b3}


def gaussian_toy_dag() -> DagSpec:
    return DagSpec.build(
        [("A", "treatment"), ("X1", "numeric"), ("X2", "numeric"), ("Y", "outcome")],
        [("A", "X1"), ("A", "X2"), ("X1", "X2"), ("A", "Y"), ("X1", "Y"), ("X2", "Y")],
    )


def gen_gaussian_toy(cfg: GaussianToyConfig) -> Dataset:
    rng_a = stream(cfg.seed, "treatment")
    if cfg.n0 is None:
        while True:
            a = (rng_a.random(cfg.n) >= cfg.p0).astype(int)
            if 0 < a.sum() < cfg.n:
                break
    else:
        a = np.r_[np.zeros(cfg.n0, dtype=int), np.ones(cfg.n - cfg.n0, dtype=int)]

    z = stream(cfg.seed, "mediators").standard_normal((cfg.n, 2))
    X = np.empty((cfg.n, 2))
    for g in (0, 1):
        mean, cov = cfg.group_params(g)
        rows = a == g
        X[rows] = mean + z[rows] @ np.linalg.cholesky(cov).T
    eps = stream(cfg.seed, "outcome").standard_normal(cfg.n)
    b1, b2, b3 = cfg.coefs
    y = b1 * X[:, 0] + b2 * X[:, 1] + b3 * a + cfg.noise_sd * eps
    frame = pd.DataFrame({"A": a, "X1": X[:, 0], "X2": X[:, 1], "Y": y},
                         index=pd.RangeIndex(cfg.n, name="unit"))
    return Dataset(frame, "A", "Y", {"X1": NUMERIC, "X2": NUMERIC, "Y": NUMERIC})


def _corr_cov(sd: float, r: float) -> tuple:
    return ((sd * sd, r * sd * sd), (r * sd * sd, sd * sd))


@dataclass(frozen=True)
class ThreeMediatorConfig:
    """Two Gaussian mediators, a three-level mediator and a binary outcome.

    ``level_coefs`` maps each non-reference level to its logit coefficients
    ``(intercept, X1, X2, A)``; the last level has logit 0.
    ``outcome_coefs[a]`` is ``(intercept, X1, X2)`` and
    ``level_shift[a]`` the outcome-logit shift of each level in group ``a``.
    """

    n0: int = 400
    n1: int = 200
    mean0: tuple[float, float] = (-1.0, -1.0)
    cov0: tuple = _corr_cov(1.2, 0.5)
    mean1: tuple[float, float] = (1.5, 1.5)
    cov1: tuple = _corr_cov(0.9, -0.4)
    levels: tuple[str, ...] = ("A", "B", "C")
    level_coefs: tuple = ((0.5, 0.3, -0.4, 0.2), (-0.3, -0.2, 0.5, -0.1))
    outcome_coefs: tuple = ((-0.2, 0.6, -0.6), (0.1, -0.2, 0.8))
    level_shift: tuple = ((0.0, 0.2, -0.3), (0.0, -0.2, -0.1))
    seed: int = 0

    def __post_init__(self):
        if self.n0 < 1 or self.n1 < 1:
            raise ValueError("both groups need at least one unit")
        if len(self.level_coefs) != len(self.levels) - 1:
            raise ValueError("need one coefficient set per non-reference level")

    def level_probabilities(self, X: np.ndarray, a: np.ndarray) -> np.ndarray:
        design = np.column_stack([np.ones(len(X)), X[:, 0], X[:, 1], a])
        logits = np.column_stack([design @ np.asarray(c) for c in self.level_coefs] + [np.zeros(len(X))])
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)


def three_mediator_dag() -> DagSpec:
    return DagSpec.build(
        [("A", "treatment"), ("X1", "numeric"), ("X2", "numeric"), ("X3", "categorical"), ("Y", "outcome")],
        [("A", "X1"), ("A", "X2"), ("A", "X3"), ("X1", "X2"), ("X1", "X3"), ("X2", "X3"),
         ("A", "Y"), ("X1", "Y"), ("X2", "Y"), ("X3", "Y")],
    )


def gen_three_mediator(cfg: ThreeMediatorConfig) -> Dataset:
    n = cfg.n0 + cfg.n1
    a = np.r_[np.zeros(cfg.n0, dtype=int), np.ones(cfg.n1, dtype=int)]
    z = stream(cfg.seed, "mediators").standard_normal((n, 2))
    X = np.empty((n, 2))
    for g, mean, cov in ((0, cfg.mean0, cfg.cov0), (1, cfg.mean1, cfg.cov1)):
        rows = a == g
        X[rows] = np.asarray(mean) + z[rows] @ np.linalg.cholesky(np.asarray(cov)).T

    probs = cfg.level_probabilities(X, a)
    u = stream(cfg.seed, "categorical").random(n)
    codes = np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), len(cfg.levels) - 1)

    coefs = np.asarray(cfg.outcome_coefs)[a]
    shift = np.asarray(cfg.level_shift)[a, codes]
    eta = coefs[:, 0] + coefs[:, 1] * X[:, 0] + coefs[:, 2] * X[:, 1] + shift
    y = (stream(cfg.seed, "outcome").random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)

    frame = pd.DataFrame(
        {"A": a, "X1": X[:, 0], "X2": X[:, 1],
         "X3": np.asarray(cfg.levels, dtype=object)[codes], "Y": y},
        index=pd.RangeIndex(n, name="unit"),
    )
    return Dataset(frame, "A", "Y", {"X1": NUMERIC, "X2": NUMERIC, "X3": CATEGORICAL, "Y": NUMERIC},
                   {"X3": list(cfg.levels)})


# --- Monte Carlo -------------------------------------------------------------

METHODS = ("st1", "st2", "ot", "skh")
MC_COLUMNS = ["method", "rep", "delta_bar", "zeta_bar", "tau_bar", "eta_hat"]


@dataclass(frozen=True)
class MonteCarloSpec:
    """What one replication runs; shipped to worker processes."""

    config: GaussianToyConfig | ThreeMediatorConfig
    methods: tuple[str, ...]
    regressor: str = "kernel"
    skh_gamma: float = 0.1
    regressor_seed: int = 0
    transport: object = None


def _dataset_and_dag(cfg):
    if isinstance(cfg, GaussianToyConfig):
        return gen_gaussian_toy(cfg), gaussian_toy_dag()
    return gen_three_mediator(cfg), three_mediator_dag()


def _method_counterfactuals(method: str, data: Dataset, spec: DagSpec, mc: MonteCarloSpec):
    from .sequential import TransportConfig, joint_transport, sequential_transport

    if method == "st1":
        return sequential_transport(data, spec, None, mc.transport or TransportConfig())
    if method == "st2":
        # reverse the first two mediators; requires a graph where that is valid
        swapped = _reversed_first_edge(spec)
        return sequential_transport(data, swapped, None, mc.transport or TransportConfig())
    if method == "ot":
        return joint_transport(data, spec, "ot")
    if method == "skh":
        return joint_transport(data, spec, "skh", gamma=mc.skh_gamma)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def _reversed_first_edge(spec: DagSpec) -> DagSpec:
    """Same graph with the edge between the first two mediators reversed."""
    first, second = spec.mediators[:2]
    edges = [(b, a) if (a, b) == (first, second) else (a, b) for a, b in spec.edges]
    return DagSpec(spec.nodes, tuple(edges))


def run_replication(mc: MonteCarloSpec, rep: int, seed: int) -> list[dict]:
    from .effects import decompose, fit_outcome_model, overlap_check

    cfg = replace(mc.config, seed=seed + rep)
    rows = []
    try:
        data, spec = _dataset_and_dag(cfg)
        mu0 = fit_outcome_model(data, 0, mc.regressor, seed=mc.regressor_seed, features=list(spec.mediators))
        mu1 = fit_outcome_model(data, 1, mc.regressor, seed=mc.regressor_seed, features=list(spec.mediators))
    except Exception as exc:  # noqa: BLE001 - a failed replication becomes NaN rows
        log.warning("replication %d failed during setup: %s", rep, exc)
        return [_failed_row(m, rep) for m in mc.methods]
    for method in mc.methods:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cf = _method_counterfactuals(method, data, spec, mc)
            eff = decompose(mu0, mu1, cf)
            overlap = overlap_check(cf, data.group(cf.target_group))
            rows.append({"method": method, "rep": rep, "delta_bar": eff.delta_bar,
                         "zeta_bar": eff.zeta_bar, "tau_bar": eff.tau_bar, "eta_hat": overlap.eta_hat})
        except Exception as exc:  # noqa: BLE001
            log.warning("replication %d, method %s failed: %s", rep, method, exc)
            rows.append(_failed_row(method, rep))
    return rows


def _failed_row(method: str, rep: int) -> dict:
    nan = float("nan")
    return {"method": method, "rep": rep, "delta_bar": nan, "zeta_bar": nan, "tau_bar": nan, "eta_hat": nan}


def _run_chunk(args):
    mc, reps, seed = args
    out = []
    for rep in reps:
        out.extend(run_replication(mc, rep, seed))
    return out


def run_monte_carlo(
    cfg: GaussianToyConfig | ThreeMediatorConfig,
    methods=("st1",),
    B: int = 200,
    seed: int = 0,
    workers: int = 1,
    regressor: str = "kernel",
    skh_gamma: float = 0.1,
    transport=None,
) -> pd.DataFrame:
    """Replicate data generation, transport and decomposition ``B`` times.

    Replication ``r`` uses data seed ``seed + r``. Failed (replication,
    method) pairs yield rows of NaN. Rows are sorted by replication, then by
    the order of ``methods``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    methods = tuple(m.lower() for m in methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    mc = MonteCarloSpec(cfg, methods, regressor, skh_gamma, transport=transport)
    reps = list(range(B))
    if workers <= 1:
        rows = _run_chunk((mc, reps, seed))
    else:
        chunks = [reps[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [r for part in pool.map(_run_chunk, [(mc, c, seed) for c in chunks]) for r in part]
    table = pd.DataFrame(rows, columns=MC_COLUMNS)
    table["method_rank"] = table["method"].map({m: k for k, m in enumerate(methods)})
    table = table.sort_values(["rep", "method_rank"], kind="stable").drop(columns="method_rank")
    return table.reset_index(drop=True)
