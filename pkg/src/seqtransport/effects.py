"""Outcome regressions and the direct / indirect / total effect decomposition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .data import CATEGORICAL, Dataset
from .errors import EmptyGroup, MissingOutcome, SchemaMismatch
from .sequential import CounterfactualSet

KERNEL = "kernel"
TREES = "trees"
_KIND_ALIASES = {
    "kernel": KERNEL,
    "kernel-regression": KERNEL,
    "trees": TREES,
    "bagged-trees": TREES,
    "forest": TREES,
    "rf": TREES,
}
BANDWIDTH_GRID = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


# --- regressors ----------------------------------------------------------------


class LocalLinearRegressor:
    """Gaussian-kernel local-linear regression.

    Numeric features are smoothed with a product Gaussian kernel; categorical
    features (given as integer codes) define cells that must match exactly.
    The bandwidth of feature ``d`` is ``c * sd_d * n^(-1/(p + 4))`` where the
    multiplier ``c`` is picked by leave-one-out error over ``BANDWIDTH_GRID``.
    A query whose kernel weights have an effective sample size below
    ``min_ess`` (default ``10 * (p + 1)``, capped at ``n / 2``) gets its
    bandwidth widened by factors of sqrt(2) until it has enough; far from
    the data this moves the fit towards a global linear one instead of a
    slope estimated from a handful of boundary points. Queries that still
    lack local data fall back to the local mean, and queries in a cell absent
    from training ignore the categorical match.
    """

    def __init__(self, max_cv_points: int = 1500, chunk: int = 512, ridge: float = 1e-8,
                 min_ess: float | None = None, max_widenings: int = 16):
        self.max_cv_points = max_cv_points
        self.chunk = chunk
        self.ridge = ridge
        self.min_ess = min_ess
        self.max_widenings = max_widenings

    def fit(self, X_num: np.ndarray, cells: np.ndarray, y: np.ndarray):
        self.X = np.asarray(X_num, dtype=float)
        self.cells = np.asarray(cells, dtype=np.int64)
        self.y = np.asarray(y, dtype=float)
        n, p = self.X.shape
        self.constant = bool(np.all(self.y == self.y[0]))
        sd = self.X.std(axis=0, ddof=1) if n > 1 else np.ones(p)
        self.scale = np.where(sd > 0, sd, 1.0) * n ** (-1.0 / (p + 4))
        floor = 10.0 * (p + 1) if self.min_ess is None else float(self.min_ess)
        self.ess_floor = min(floor, n / 2.0)
        self.multiplier = 1.0
        if not self.constant and p and n > 3:
            self.multiplier = self._select_multiplier()
        return self

    def _select_multiplier(self) -> float:
        n = len(self.y)
        rng = np.random.default_rng(12345)
        idx = np.arange(n) if n <= self.max_cv_points else np.sort(rng.choice(n, self.max_cv_points, replace=False))
        best, best_err = BANDWIDTH_GRID[0], np.inf
        for c in BANDWIDTH_GRID:
            pred = self._predict(self.X[idx], self.cells[idx], c, leave_out=idx)
            err = float(np.mean((pred - self.y[idx]) ** 2))
            if err < best_err - 1e-12:
                best, best_err = c, err
        return best

    def predict(self, X_num: np.ndarray, cells: np.ndarray) -> np.ndarray:
        if self.constant:
            return np.full(len(X_num), self.y[0])
        return self._predict(np.asarray(X_num, dtype=float), np.asarray(cells, dtype=np.int64), self.multiplier)

    def _predict(self, Xq, cq, multiplier, leave_out=None) -> np.ndarray:
        out = np.empty(len(Xq))
        h = self.scale * multiplier
        Xs = self.X / h
        for start in range(0, len(Xq), self.chunk):
            stop = min(start + self.chunk, len(Xq))
            q = Xq[start:stop] / h
            d2 = (
                (q * q).sum(1)[:, None]
                + (Xs * Xs).sum(1)[None, :]
                - 2.0 * q @ Xs.T
            )
            logw = -0.5 * np.maximum(d2, 0.0)
            same = cq[start:stop, None] == self.cells[None, :]
            if leave_out is not None:
                same[np.arange(stop - start), leave_out[start:stop]] = False
            has_cell = same.any(axis=1)
            # queries whose cell never occurs in training smooth across cells
            mask = np.where(has_cell[:, None], same, True)
            if leave_out is not None:
                mask[np.arange(stop - start), leave_out[start:stop]] = False
            W = self._weights(logw, mask)
            short = np.flatnonzero(_ess(W) < self.ess_floor)
            for k in range(1, self.max_widenings + 1):
                if not short.size:
                    break
                # dividing the log-weights by 2^k scales the bandwidth by 2^(k/2)
                widened = self._weights(logw[short] / 2.0 ** k, mask[short])
                W[short] = widened
                short = short[_ess(widened) < self.ess_floor]
            out[start:stop] = self._local_fit(W, Xq[start:stop])
        return out

    @staticmethod
    def _weights(logw: np.ndarray, mask: np.ndarray) -> np.ndarray:
        logw = np.where(mask, logw, -np.inf)
        top = logw.max(axis=1, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        return np.exp(logw - top)

    def _local_fit(self, W: np.ndarray, Xq: np.ndarray) -> np.ndarray:
        p = self.X.shape[1]
        s0 = W.sum(axis=1)
        s0_safe = np.where(s0 > 0, s0, 1.0)
        nw = (W @ self.y) / s0_safe
        if p == 0:
            return np.where(s0 > 0, nw, self.y.mean())
        # weighted least squares of y on (1, x - q), written with moments
        mx = (W @ self.X) / s0_safe[:, None]
        my = nw
        Xc = self.X
        sxx = np.einsum("qn,ni,nj->qij", W, Xc, Xc) / s0_safe[:, None, None] - mx[:, :, None] * mx[:, None, :]
        sxy = (W @ (Xc * self.y[:, None])) / s0_safe[:, None] - mx * my[:, None]
        ess = _ess(W)
        ridge = self.ridge * (np.trace(sxx, axis1=1, axis2=2) / p + 1e-12)
        A = sxx + ridge[:, None, None] * np.eye(p)
        ok = ess >= p + 2
        beta = np.zeros((len(W), p))
        if ok.any():
            beta[ok] = np.linalg.solve(A[ok], sxy[ok][:, :, None])[:, :, 0]
        pred = my + ((Xq - mx) * beta).sum(axis=1)
        pred = np.where(ok, pred, nw)
        return np.where(s0 > 0, pred, self.y.mean())


def _ess(W: np.ndarray) -> np.ndarray:
    return W.sum(axis=1) ** 2 / np.maximum((W * W).sum(axis=1), 1e-300)


@dataclass
class SupportSummary:
    """Training-sample footprint: ranges and within-sample NN distances."""

    ranges: dict[str, tuple[float, float]]
    nn_distances: np.ndarray


@dataclass
class OutcomeModel:
    """Fitted regression of the outcome on the mediators within one group."""

    group: int
    kind: str
    features: tuple[str, ...]
    kinds: dict[str, str]
    levels: dict[str, list[str]]
    binary: bool
    support: SupportSummary
    estimator: object = field(repr=False)

    def _encode(self, frame: pd.DataFrame):
        missing = [c for c in self.features if c not in frame.columns]
        if missing:
            raise SchemaMismatch(f"columns {missing} required by the outcome model are missing")
        numeric = [c for c in self.features if self.kinds[c] != CATEGORICAL]
        categorical = [c for c in self.features if self.kinds[c] == CATEGORICAL]
        X_num = frame[numeric].to_numpy(dtype=float) if numeric else np.zeros((len(frame), 0))
        codes = []
        for c in categorical:
            lookup = {lvl: k for k, lvl in enumerate(self.levels[c])}
            mapped = frame[c].astype(str).map(lookup)
            if mapped.isna().any():
                raise SchemaMismatch(f"column {c!r} has levels unknown to the outcome model")
            codes.append(mapped.to_numpy(dtype=np.int64))
        return X_num, codes

    def predict(self, frame: pd.DataFrame) -> np.ndarray:
        X_num, codes = self._encode(frame)
        if self.kind == KERNEL:
            pred = self.estimator.predict(X_num, _cell_ids(codes, self.levels, self.features, self.kinds, len(frame)))
        else:
            pred = self.estimator.predict(_tree_design(X_num, codes, self.levels, self.features, self.kinds))
        if self.binary:
            pred = np.clip(pred, 0.0, 1.0)
        return pred


def _cell_ids(codes, levels, features, kinds, n) -> np.ndarray:
    cell = np.zeros(n, dtype=np.int64)
    categorical = [c for c in features if kinds[c] == CATEGORICAL]
    for c, col in zip(categorical, codes):
        cell = cell * len(levels[c]) + col
    return cell


def _tree_design(X_num, codes, levels, features, kinds) -> np.ndarray:
    blocks = [X_num]
    categorical = [c for c in features if kinds[c] == CATEGORICAL]
    for c, col in zip(categorical, codes):
        blocks.append(np.eye(len(levels[c]))[col])
    return np.hstack(blocks)


def fit_outcome_model(
    data: Dataset,
    group: int,
    kind: str = KERNEL,
    features: list[str] | None = None,
    seed: int = 0,
    n_trees: int = 300,
) -> OutcomeModel:
    """Fit ``E[Y | A = group, X = x]`` on the mediator columns ``features``.

    ``kind`` is ``"kernel"`` (local-linear kernel regression) or ``"trees"``
    (random forest with a fixed seed). Binary 0/1 outcomes are regressed on
    the probability scale and predictions are clipped to ``[0, 1]``.
    """
    if kind not in _KIND_ALIASES:
        raise ValueError(f"unknown regressor {kind!r}")
    kind = _KIND_ALIASES[kind]
    if data.outcome is None or data.outcome not in data.frame.columns:
        raise MissingOutcome("dataset has no outcome column")
    if features is None:
        features = [c for c in data.frame.columns if c not in (data.treatment, data.outcome)]
    sub = data.frame[data.treatment_values == group]
    if sub.empty:
        raise EmptyGroup(f"treatment group {group} has no units")
    y = pd.to_numeric(sub[data.outcome], errors="coerce").to_numpy(dtype=float)
    if np.isnan(y).any():
        raise MissingOutcome("outcome column has missing or non-numeric values")
    binary = bool(np.isin(data.frame[data.outcome].astype(float).unique(), (0.0, 1.0)).all())
    kinds = {c: data.kinds[c] for c in features}
    levels = {c: list(data.levels[c]) for c in features if kinds[c] == CATEGORICAL}

    model = OutcomeModel(group, kind, tuple(features), kinds, levels, binary,
                         _support_summary(sub, features, kinds), None)
    X_num, codes = model._encode(sub)
    if kind == KERNEL:
        cells = _cell_ids(codes, levels, features, kinds, len(sub))
        model.estimator = LocalLinearRegressor().fit(X_num, cells, y)
    else:
        from sklearn.ensemble import RandomForestRegressor

        forest = RandomForestRegressor(n_estimators=n_trees, min_samples_leaf=5, random_state=seed, n_jobs=1)
        model.estimator = forest.fit(_tree_design(X_num, codes, levels, features, kinds), y)
    return model


def _support_summary(frame: pd.DataFrame, features, kinds) -> SupportSummary:
    ranges = {c: (float(frame[c].min()), float(frame[c].max())) for c in features if kinds[c] != CATEGORICAL}
    report = _nn_report(frame[list(features)], frame[list(features)], kinds, self_match=True)
    return SupportSummary(ranges, report)


# --- decomposition ---------------------------------------------------------------


@dataclass
class Attribution:
    """Cumulative indirect effects as mediators are transported one by one.

    ``cumulative[:, j]`` is the indirect effect with the first ``j`` nodes of
    ``order`` transported; ``increments[:, j - 1]`` its change at node ``j``.
    """

    unit_ids: np.ndarray
    order: tuple[str, ...]
    cumulative: np.ndarray
    increments: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.increments, index=pd.Index(self.unit_ids, name="unit"),
                            columns=[f"delta_{name}" for name in self.order])


@dataclass
class OverlapReport:
    eta_hat: float
    flagged: np.ndarray
    threshold: float
    distances: np.ndarray = field(repr=False)


@dataclass
class EffectDecomposition:
    unit_ids: np.ndarray
    delta: np.ndarray
    zeta: np.ndarray
    tau: np.ndarray
    delta_bar: float
    zeta_bar: float
    tau_bar: float
    direction: str = "0->1"
    attribution: Attribution | None = None
    overlap: OverlapReport | None = None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"delta": self.delta, "zeta": self.zeta, "tau": self.tau},
                             index=pd.Index(self.unit_ids, name="unit"))
        if self.attribution is not None:
            frame = frame.join(self.attribution.to_frame())
        return frame

    def summary(self) -> dict:
        return {"delta_bar": self.delta_bar, "zeta_bar": self.zeta_bar, "tau_bar": self.tau_bar,
                "eta_hat": None if self.overlap is None else self.overlap.eta_hat}


def _source_target_models(mu0: OutcomeModel, mu1: OutcomeModel, cf: CounterfactualSet):
    if mu0.group != 0 or mu1.group != 1:
        raise ValueError("expected the group-0 model first and the group-1 model second")
    missing = [c for c in set(mu0.features) | set(mu1.features) if c not in cf.original.columns]
    if missing:
        raise SchemaMismatch(f"counterfactuals lack columns {sorted(missing)}")
    return (mu0, mu1) if cf.direction == "0->1" else (mu1, mu0)


def decompose(
    mu0: OutcomeModel,
    mu1: OutcomeModel,
    cf: CounterfactualSet,
    observed_outcome: np.ndarray | None = None,
) -> EffectDecomposition:
    """Unit-level indirect (delta), direct (zeta) and total (tau) effects.

    With ``s`` the source group and ``t`` the target group of ``cf``:
    ``delta_i = mu_s(x*_i) - mu_s(x_i)``, ``zeta_i = mu_t(x*_i) - mu_s(x*_i)``
    and ``tau_i = delta_i + zeta_i``. Averages are over source units and
    ``tau_bar`` is defined as ``delta_bar + zeta_bar``.

    ``observed_outcome`` (experimental) replaces ``mu_s(x_i)`` by the
    observed outcomes of the source units.
    """
    mu_s, mu_t = _source_target_models(mu0, mu1, cf)
    factual = mu_s.predict(cf.original)
    if observed_outcome is not None:
        factual = np.asarray(observed_outcome, dtype=float).ravel()
        if factual.size != len(cf):
            raise SchemaMismatch(f"{factual.size} observed outcomes for {len(cf)} units")
    moved_s = mu_s.predict(cf.transported)
    moved_t = mu_t.predict(cf.transported)
    delta = moved_s - factual
    zeta = moved_t - moved_s
    tau = delta + zeta
    delta_bar = float(np.mean(delta))
    zeta_bar = float(np.mean(zeta))
    return EffectDecomposition(cf.unit_ids, delta, zeta, tau, delta_bar, zeta_bar,
                               delta_bar + zeta_bar, cf.direction)


def attribute_mediators(mu0: OutcomeModel, cf: CounterfactualSet, mu1: OutcomeModel | None = None) -> Attribution:
    """Indirect effect accumulated along the transport order.

    ``mu0`` is the source-group model. For a ``"1->0"`` counterfactual set
    pass the group-1 model here (or both models, in which case the right one
    is chosen).
    """
    model = mu0
    if mu1 is not None:
        model, _ = _source_target_models(mu0, mu1, cf)
    base = model.predict(cf.original)
    d = len(cf.order)
    cumulative = np.zeros((len(cf), d + 1))
    for j in range(1, d + 1):
        frame = cf.transported if j == d else cf.partial(j)
        cumulative[:, j] = model.predict(frame) - base
    increments = np.diff(cumulative, axis=1)
    return Attribution(cf.unit_ids, cf.order, cumulative, increments)


# --- overlap -------------------------------------------------------------------------


def _nn_report(points: pd.DataFrame, support: pd.DataFrame, kinds, self_match: bool, scale=None) -> np.ndarray:
    """Distance from each row of ``points`` to its nearest row of ``support``.

    Numeric columns are divided by ``scale`` (support standard deviations by
    default); categorical columns must match exactly, so distances are taken
    within cells. ``self_match`` skips the zero distance of a point to itself.
    """
    numeric = [c for c in points.columns if kinds.get(c) != CATEGORICAL]
    categorical = [c for c in points.columns if kinds.get(c) == CATEGORICAL]
    if scale is None:
        sd = support[numeric].to_numpy(dtype=float).std(axis=0, ddof=1) if len(support) > 1 and numeric else np.ones(len(numeric))
        scale = np.where(sd > 0, sd, 1.0)
    P = points[numeric].to_numpy(dtype=float) / scale if numeric else np.zeros((len(points), 0))
    S = support[numeric].to_numpy(dtype=float) / scale if numeric else np.zeros((len(support), 0))
    key_p = points[categorical].astype(str).agg("\x1f".join, axis=1) if categorical else pd.Series("", index=points.index)
    key_s = support[categorical].astype(str).agg("\x1f".join, axis=1) if categorical else pd.Series("", index=support.index)
    key_p, key_s = key_p.to_numpy(), key_s.to_numpy()
    out = np.full(len(points), np.inf)
    k = 2 if self_match else 1
    for cell in np.unique(key_p):
        rows = np.flatnonzero(key_p == cell)
        cols = np.flatnonzero(key_s == cell)
        if cols.size < k:
            continue
        if S.shape[1] == 0:
            out[rows] = 0.0
            continue
        tree = cKDTree(S[cols])
        dist, _ = tree.query(P[rows], k=k)
        out[rows] = dist[:, -1] if k == 2 else dist
    return out


def overlap_check(cf: CounterfactualSet, support: pd.DataFrame | Dataset, quantile: float = 0.99) -> OverlapReport:
    """Flag transported profiles that sit outside the support sample.

    A profile is flagged when its nearest-neighbour distance to the support
    sample exceeds the ``quantile`` of the support's own nearest-neighbour
    distances (numeric coordinates scaled by the support's standard
    deviations, categorical coordinates matched exactly).
    """
    frame = support.frame if isinstance(support, Dataset) else support
    cols = cf.mediators
    if frame.empty:
        raise EmptyGroup("support sample is empty")
    within = _nn_report(frame[cols], frame[cols], cf.kinds, self_match=True)
    finite = within[np.isfinite(within)]
    threshold = float(np.quantile(finite, quantile)) if finite.size else 0.0
    numeric = [c for c in cols if cf.kinds.get(c) != CATEGORICAL]
    sd = frame[numeric].to_numpy(dtype=float).std(axis=0, ddof=1) if len(frame) > 1 and numeric else np.ones(len(numeric))
    scale = np.where(sd > 0, sd, 1.0)
    dist = _nn_report(cf.transported[cols], frame[cols], cf.kinds, self_match=False, scale=scale)
    flagged_mask = dist > threshold
    return OverlapReport(float(flagged_mask.mean()) if len(dist) else 0.0,
                         cf.unit_ids[flagged_mask], threshold, dist)
