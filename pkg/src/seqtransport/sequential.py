"""Sequential transport of a mediator vector along a DAG, plus joint baselines.

Each mediator is moved in topological order. A root numeric mediator goes
through the marginal monotone map between the two groups. A numeric mediator
with parents goes through the kernel-conditional map evaluated at the unit's
factual parents (source side) and at its already transported parents
(target side). Categorical mediators travel on the probability simplex and
are allocated back to levels.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from . import dag as dagmod
from .categorical import (
    ClassProbModel,
    allocate_to_vertices,
    constant_model,
    fit_multinomial_logit,
    renormalize,
)
from .conditional import KernelConfig, KernelSample, transport_with
from .data import CATEGORICAL, NUMERIC, Dataset
from .discrete import barycentric_map, cost_matrix, sinkhorn, solve_exact
from .errors import (
    AllWeightsZero,
    DegenerateWeights,
    IndexOutOfRange,
    RankDeficientPredictors,
    SchemaMismatch,
    SeqTransportError,
    TransportError,
    UnknownUnit,
)
from .univariate import fit_weighted_distribution, monotone_transport

log = logging.getLogger(__name__)

DIRECTIONS = ("0->1", "1->0")


@dataclass(frozen=True)
class NodeConfig:
    """Per-mediator overrides of the global transport settings."""

    bandwidths: tuple[float, ...] | None = None
    gamma: float | None = None


@dataclass(frozen=True)
class TransportConfig:
    """Settings shared by every mediator unless overridden in ``nodes``.

    Attributes
    ----------
    kernel : kernel settings for conditional CDFs and categorical weights.
    simplex_gamma : entropic regularization for categorical transport.
    sinkhorn_tol, sinkhorn_max_iter : Sinkhorn stopping rule.
    allocation : ``"marginal"`` allocates transported simplex points under
        the target level proportions; ``"argmax"`` rounds each point alone.
    max_bandwidth_doublings : how often a unit's bandwidth may be doubled
        when its kernel weights are degenerate.
    nodes : per-node overrides.
    """

    kernel: KernelConfig = field(default_factory=KernelConfig)
    simplex_gamma: float = 0.01
    sinkhorn_tol: float = 1e-8
    sinkhorn_max_iter: int = 10_000
    allocation: str = "marginal"
    max_bandwidth_doublings: int = 10
    nodes: Mapping[str, NodeConfig] = field(default_factory=dict)

    def __post_init__(self):
        if self.allocation not in ("marginal", "argmax"):
            raise ValueError(f"unknown allocation rule {self.allocation!r}")
        if not self.simplex_gamma > 0:
            raise ValueError("simplex_gamma must be positive")

    def node(self, name: str) -> NodeConfig:
        return self.nodes.get(name, NodeConfig())


@dataclass
class CounterfactualSet:
    """Factual and transported mediator profiles of the source-group units.

    Columns of ``original`` and ``transported`` follow the DAG's declaration
    order of mediators, followed by any pass-through columns. ``order`` is
    the order in which mediators were transported; partial vectors follow it.
    """

    unit_ids: np.ndarray
    order: tuple[str, ...]
    original: pd.DataFrame
    transported: pd.DataFrame
    kinds: dict[str, str]
    levels: dict[str, list[str]]
    direction: str = "0->1"
    method: str = "st"
    diagnostics: dict = field(default_factory=dict)

    @property
    def mediators(self) -> list[str]:
        return [c for c in self.original.columns if c in self.order]

    @property
    def source_group(self) -> int:
        return 0 if self.direction == "0->1" else 1

    @property
    def target_group(self) -> int:
        return 1 - self.source_group

    def __len__(self) -> int:
        return len(self.unit_ids)

    def partial(self, j: int) -> pd.DataFrame:
        """Profiles with the first ``j`` mediators of ``order`` transported."""
        if not 0 <= j <= len(self.order):
            raise IndexOutOfRange(f"j must lie in [0, {len(self.order)}], got {j}")
        out = self.original.copy()
        for name in self.order[:j]:
            out[name] = self.transported[name]
        return out


def partial_vector(cf: CounterfactualSet, unit, j: int) -> pd.Series:
    """Mediator vector of ``unit`` with the first ``j`` nodes transported."""
    if not 0 <= j <= len(cf.order):
        raise IndexOutOfRange(f"j must lie in [0, {len(cf.order)}], got {j}")
    if unit not in cf.original.index:
        raise UnknownUnit(f"unit {unit!r} is not in the source group")
    row = cf.original.loc[unit].copy()
    for name in cf.order[:j]:
        row[name] = cf.transported.at[unit, name]
    return row


# --- helpers -----------------------------------------------------------------


def _groups(direction: str) -> tuple[int, int]:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return (0, 1) if direction == "0->1" else (1, 0)


def check_schema(data: Dataset, spec: dagmod.DagSpec) -> None:
    for name in spec.mediators:
        if name not in data.frame.columns:
            raise SchemaMismatch(f"mediator {name!r} is not a column of the dataset")
        expected = CATEGORICAL if spec.is_categorical(name) else NUMERIC
        if data.kinds.get(name) != expected:
            raise SchemaMismatch(f"mediator {name!r} is declared {expected} but the column is {data.kinds.get(name)}")
    if spec.treatment != data.treatment:
        raise SchemaMismatch(f"DAG treatment {spec.treatment!r} differs from dataset treatment {data.treatment!r}")


def _parent_matrix(data: Dataset, frame: pd.DataFrame, parents: list[str]) -> tuple[np.ndarray, tuple[bool, ...]]:
    cols, exact = [], []
    for name in parents:
        if data.kinds[name] == CATEGORICAL:
            cols.append(data.codes(name, frame).astype(float))
            exact.append(True)
        else:
            cols.append(frame[name].to_numpy(dtype=float))
            exact.append(False)
    matrix = np.column_stack(cols) if cols else np.zeros((len(frame), 0))
    return matrix, tuple(exact)


def _logit_design(data: Dataset, frame: pd.DataFrame, parents: list[str]) -> np.ndarray:
    """Numeric parents as-is, categorical parents as treatment-coded dummies."""
    cols = []
    for name in parents:
        if data.kinds[name] == CATEGORICAL:
            codes = data.codes(name, frame)
            for k in range(1, len(data.levels[name])):
                cols.append((codes == k).astype(float))
        else:
            cols.append(frame[name].to_numpy(dtype=float))
    return np.column_stack(cols) if cols else np.zeros((len(frame), 0))


def _fit_class_model(labels: np.ndarray, X: np.ndarray, n_levels: int, diagnostics: Counter) -> tuple[ClassProbModel, np.ndarray]:
    """Fit a logit, dropping constant or collinear predictor columns if needed.

    Returns the model and the mask of predictor columns it uses.
    """
    mask = np.ones(X.shape[1], dtype=bool)
    if np.unique(labels).size < 2:
        diagnostics["single_level_group"] += 1
        return constant_model(labels, n_levels, 0), np.zeros(X.shape[1], dtype=bool)
    if X.shape[1]:
        mask = X.std(axis=0) > 0
    try:
        return fit_multinomial_logit(labels, X[:, mask], n_levels), mask
    except RankDeficientPredictors:
        diagnostics["rank_deficient_predictors"] += 1
        return constant_model(labels, n_levels, 0), np.zeros(X.shape[1], dtype=bool)


class _Node:
    """Fitted, immutable per-node state shared by all unit transports."""

    def __init__(self, name, data, spec, src, tgt, cfg: TransportConfig):
        self.name = name
        self.parents = dagmod.parents_of(spec, name)
        self.categorical = spec.is_categorical(name)
        node_cfg = cfg.node(name)
        src_rows, exact = _parent_matrix(data, src, self.parents)
        tgt_rows, _ = _parent_matrix(data, tgt, self.parents)
        kcfg = KernelConfig(
            kernel=cfg.kernel.kernel,
            bandwidths=node_cfg.bandwidths if node_cfg.bandwidths is not None else cfg.kernel.bandwidths,
            min_effective_weight=cfg.kernel.min_effective_weight,
            exact_match=exact,
        )
        self.kernel_cfg = kcfg
        self.gamma = node_cfg.gamma if node_cfg.gamma is not None else cfg.simplex_gamma
        if self.categorical:
            src_child = data.codes(name, src).astype(float)
            tgt_child = data.codes(name, tgt).astype(float)
        else:
            src_child = src[name].to_numpy(dtype=float)
            tgt_child = tgt[name].to_numpy(dtype=float)
        self.src_child, self.tgt_child = src_child, tgt_child
        self.src_rows, self.tgt_rows = src_rows, tgt_rows
        self.source = KernelSample(src_child, src_rows, kcfg)
        self.target = KernelSample(tgt_child, tgt_rows, kcfg)
        self._relaxed = None

    def relaxed(self):
        """Samples that smooth over categorical parents instead of matching them."""
        if self._relaxed is None:
            cfg = KernelConfig(self.kernel_cfg.kernel, self.kernel_cfg.bandwidths,
                               self.kernel_cfg.min_effective_weight, None)
            self._relaxed = (
                KernelSample(self.src_child, self.src_rows, cfg),
                KernelSample(self.tgt_child, self.tgt_rows, cfg),
            )
        return self._relaxed


def _with_fallbacks(fn, node: _Node, cfg: TransportConfig, diagnostics: Counter):
    """Run ``fn(source, target, scale)``, widening bandwidths on degenerate weights."""
    source, target = node.source, node.target
    try:
        return _widening(fn, source, target, cfg, diagnostics)
    except AllWeightsZero:
        diagnostics["categorical_parent_fallback"] += 1
        source, target = node.relaxed()
        return _widening(fn, source, target, cfg, diagnostics)


def _widening(fn, source, target, cfg, diagnostics):
    scale = 1.0
    for attempt in range(cfg.max_bandwidth_doublings + 1):
        try:
            result = fn(source, target, scale)
            if attempt:
                diagnostics["bandwidth_widened"] += 1
            return result
        except DegenerateWeights:
            if attempt == cfg.max_bandwidth_doublings:
                raise
            scale *= 2.0


# --- sequential transport ----------------------------------------------------


def sequential_transport(
    data: Dataset,
    spec: dagmod.DagSpec,
    order: dagmod.TopologicalOrder | list[str] | None = None,
    cfg: TransportConfig | None = None,
    direction: str = "0->1",
) -> CounterfactualSet:
    """Transport every source-group unit's mediators to the other group."""
    cfg = cfg or TransportConfig()
    dagmod.validate(spec)
    check_schema(data, spec)
    order = dagmod.topological_order(spec) if order is None else dagmod.check_order(spec, list(order))
    source_group, target_group = _groups(direction)
    src = data.group(source_group)
    tgt = data.group(target_group)

    mediators = list(spec.mediators)
    roles = {data.treatment, data.outcome}
    passthrough = [c for c in data.frame.columns if c not in mediators and c not in roles]
    columns = mediators + passthrough
    original = src[columns].copy()
    transported = original.copy()

    diagnostics: dict = {"passthrough": passthrough, "nodes": {}}
    for name in order:
        counter: Counter = Counter()
        node = _Node(name, data, spec, src, tgt, cfg)
        z0, _ = _parent_matrix(data, original, node.parents)
        z1, _ = _parent_matrix(data, transported, node.parents)
        try:
            if node.categorical:
                codes = _transport_categorical(node, data, src, tgt, original, transported, z0, z1, cfg, counter)
                transported[name] = np.asarray(data.levels[name], dtype=object)[codes]
            elif not node.parents:
                f0 = fit_weighted_distribution(node.src_child)
                f1 = fit_weighted_distribution(node.tgt_child)
                transported[name] = monotone_transport(f0, f1, node.src_child, counter)
            else:
                transported[name] = _transport_numeric(node, z0, z1, original.index, cfg, counter)
        except TransportError:
            raise
        except (SeqTransportError, ValueError, np.linalg.LinAlgError) as exc:
            raise TransportError(name, None, exc) from exc
        diagnostics["nodes"][name] = dict(sorted(counter.items()))

    return CounterfactualSet(
        unit_ids=original.index.to_numpy(),
        order=tuple(order),
        original=original,
        transported=transported,
        kinds={c: data.kinds[c] for c in columns},
        levels={c: list(data.levels[c]) for c in columns if c in data.levels},
        direction=direction,
        method="st",
        diagnostics=diagnostics,
    )


def _transport_numeric(node: _Node, z0, z1, ids, cfg, counter) -> np.ndarray:
    out = np.empty(len(ids))
    for i, unit in enumerate(ids):
        x = node.src_child[i]

        def run(source, target, scale):
            return transport_with(x, z0[i], z1[i], source, target, scale, counter)

        try:
            out[i] = _with_fallbacks(run, node, cfg, counter)
        except SeqTransportError as exc:
            raise TransportError(node.name, unit, exc) from exc
    return out


def _transport_categorical(node: _Node, data, src, tgt, original, transported, z0, z1, cfg, counter) -> np.ndarray:
    n_levels = len(data.levels[node.name])
    src_labels = node.src_child.astype(int)
    tgt_labels = node.tgt_child.astype(int)
    X_src = _logit_design(data, src, node.parents)
    X_tgt = _logit_design(data, tgt, node.parents)
    model_src, mask_src = _fit_class_model(src_labels, X_src, n_levels, counter)
    model_tgt, mask_tgt = _fit_class_model(tgt_labels, X_tgt, n_levels, counter)
    S = model_src.predict_proba(X_src[:, mask_src])
    T = model_tgt.predict_proba(X_tgt[:, mask_tgt])
    onehot_tgt = np.eye(n_levels)[tgt_labels]

    if not node.parents:
        # every source point is the same intercept-only probability vector
        w0 = np.full(len(S), 1.0 / len(S))
        w1 = np.full(len(T), 1.0 / len(T))
        plan = sinkhorn(cost_matrix(S, T), w0, w1, node.gamma, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter)
        moved = renormalize(barycentric_map(plan, T, w0))
        if cfg.allocation == "argmax":
            return np.argmax(moved, axis=1)
        pi = onehot_tgt.mean(axis=0)
        return allocate_to_vertices(moved, pi, prefer=src_labels)

    C = cost_matrix(S, T)
    K = np.exp(-C / node.gamma)
    codes = np.empty(len(S), dtype=int)
    for i, unit in enumerate(original.index):

        def run(source, target, scale):
            w0 = source.weights(z0[i], scale)
            w1 = target.weights(z1[i], scale)
            return _categorical_unit(i, w0, w1, S, T, C, K, onehot_tgt, node.gamma, cfg)

        try:
            codes[i] = _with_fallbacks(run, node, cfg, counter)
        except SeqTransportError as exc:
            raise TransportError(node.name, unit, exc) from exc
    return codes


def _categorical_unit(i, w0, w1, S, T, C, K, onehot_tgt, gamma, cfg) -> int:
    rows = np.flatnonzero(w0 > 0)
    cols = np.flatnonzero(w1 > 0)
    a = w0[rows] / w0[rows].sum()
    b = w1[cols] / w1[cols].sum()
    sub_C = C[np.ix_(rows, cols)]
    log_domain = gamma < 0.05 * float(np.median(sub_C))
    plan = sinkhorn(
        sub_C, a, b, gamma, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter,
        log_domain=log_domain, kernel=None if log_domain else K[np.ix_(rows, cols)],
    )
    moved = renormalize(barycentric_map(plan, T[cols], a))
    position = int(np.searchsorted(rows, i))
    if cfg.allocation == "argmax":
        return int(np.argmax(moved[position]))
    pi = b @ onehot_tgt[cols]
    labels = allocate_to_vertices(moved, pi, weights=a)
    return int(labels[position])


# --- joint baselines -----------------------------------------------------------


def _feature_block(data: Dataset, frame: pd.DataFrame, mediators: list[str]):
    """Numeric columns as-is and categorical columns one-hot, with column spans."""
    blocks, spans, start = [], {}, 0
    for name in mediators:
        if data.kinds[name] == CATEGORICAL:
            width = len(data.levels[name])
            blocks.append(np.eye(width)[data.codes(name, frame)])
        else:
            width = 1
            blocks.append(frame[[name]].to_numpy(dtype=float))
        spans[name] = (start, start + width)
        start += width
    return np.hstack(blocks), spans


def joint_transport(
    data: Dataset,
    spec: dagmod.DagSpec,
    method: str = "ot",
    gamma: float = 0.1,
    direction: str = "0->1",
    sinkhorn_tol: float = 1e-8,
    sinkhorn_max_iter: int = 10_000,
) -> CounterfactualSet:
    """Move all mediators at once with one discrete OT plan between the groups.

    ``method="ot"`` uses the exact plan, ``"skh"`` the Sinkhorn plan with
    regularization ``gamma``. Points follow the barycentric projection;
    categorical blocks are rounded to their largest coordinate.
    """
    if method not in ("ot", "skh"):
        raise ValueError(f"unknown joint method {method!r}")
    dagmod.validate(spec)
    check_schema(data, spec)
    order = dagmod.topological_order(spec)
    source_group, target_group = _groups(direction)
    src = data.group(source_group)
    tgt = data.group(target_group)
    mediators = list(spec.mediators)
    roles = {data.treatment, data.outcome}
    passthrough = [c for c in data.frame.columns if c not in mediators and c not in roles]
    columns = mediators + passthrough

    X0, spans = _feature_block(data, src, mediators)
    X1, _ = _feature_block(data, tgt, mediators)
    w0 = np.full(len(X0), 1.0 / len(X0))
    w1 = np.full(len(X1), 1.0 / len(X1))
    C = cost_matrix(X0, X1)
    if method == "ot":
        plan = solve_exact(C, w0, w1)
    else:
        plan = sinkhorn(C, w0, w1, gamma, sinkhorn_tol, sinkhorn_max_iter)
    moved = barycentric_map(plan, X1, w0)

    original = src[columns].copy()
    transported = original.copy()
    for name in mediators:
        lo, hi = spans[name]
        if data.kinds[name] == CATEGORICAL:
            codes = np.argmax(moved[:, lo:hi], axis=1)
            transported[name] = np.asarray(data.levels[name], dtype=object)[codes]
        else:
            transported[name] = moved[:, lo]
    diagnostics = {
        "passthrough": passthrough,
        "plan": {"cost": plan.cost_value, "n_iter": plan.n_iter, "converged": plan.converged},
    }
    return CounterfactualSet(
        unit_ids=original.index.to_numpy(),
        order=tuple(order),
        original=original,
        transported=transported,
        kinds={c: data.kinds[c] for c in columns},
        levels={c: list(data.levels[c]) for c in columns if c in data.levels},
        direction=direction,
        method=method,
        diagnostics=diagnostics,
    )
