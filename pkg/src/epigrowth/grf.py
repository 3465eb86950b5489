"""Honest causal forest over parity-paired block rows.

The treatment is the one-day step, so each leaf's treatment-effect estimate is
a local growth rate and a query's prediction solves the forest-weighted slope
estimating equation. Trees are grown on a without-replacement subsample split
into a splitting half (chooses splits via pseudo-outcome gains) and an honest
half (populates leaves); splits whose honest side is empty are collapsed so
every leaf carries weight.

Split candidates come from per-feature quantile bins (``max_bins``). A feature
with at most ``max_bins`` distinct training values is searched exhaustively
over all adjacent-midpoint thresholds; beyond that the candidate set is the
bin boundaries, which keeps tree growth linear per node. One quirk inherited
from the training-set design: if the splitting half produces no split at all,
the whole subsample becomes the honest set, so a stump predicts the plain
difference of arm means over its subsample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import _kernels
from .blocks import TrainingSet
from .errors import DegenerateNodeError, NoSupportError, UnfitError
from .features import FeatureVector
from .panel import CountyId

FOREST_FORMAT = "epigrowth-forest"
FOREST_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 500
    subsample_fraction: float = 0.5
    honesty_fraction: float = 0.5
    mtry: int | None = None  # None -> ceil(sqrt(m))
    min_leaf: int = 5  # per treatment arm
    max_depth: int | None = None
    seed: int = 0
    max_bins: int = 256

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must be in (0, 1]")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise ValueError("honesty_fraction must be in (0, 1)")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.max_bins < 2:
            raise ValueError("max_bins must be >= 2")

    def resolve_mtry(self, m: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(m)))
        if self.mtry > m:
            raise ValueError(f"mtry={self.mtry} exceeds feature count {m}")
        return self.mtry


@dataclass
class Tree:
    feature: np.ndarray  # (n_nodes,) int32, -1 = leaf
    threshold: np.ndarray  # (n_nodes,) float64
    left: np.ndarray  # (n_nodes,) int32
    right: np.ndarray  # (n_nodes,) int32
    split_rows: np.ndarray  # int64, ascending
    honest_rows: np.ndarray  # int64, ascending
    honest_leaf: np.ndarray  # (len(honest_rows),) int32 leaf node per honest row

    @property
    def n_nodes(self) -> int:
        return self.feature.size


@dataclass(frozen=True)
class GrowthEstimate:
    r_hat: float
    num_effective_rows: float
    county: CountyId | None = None
    day: int | None = None


class Forest:
    """Fitted forest; immutable after construction, shareable across threads."""

    def __init__(self, params: ForestParams, feature_names: tuple[str, ...], n_rows: int, trees: list[Tree]):
        self.params = params
        self.feature_names = tuple(feature_names)
        self.n_rows = n_rows
        self.trees = trees
        self._packed = None

    def packed(self):
        if self._packed is None:
            self._packed = _pack_trees(self.trees)
        return self._packed


def node_tau(y: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Slope of the node estimating equation; equals the difference of arm means.

    Raises DegenerateNodeError when one arm is absent.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w)
    n = y.size
    n1 = int(np.count_nonzero(w == 1))
    if n1 == 0 or n1 == n:
        raise DegenerateNodeError("node holds a single treatment arm")
    w_bar = n1 / n
    y_bar = _seq_sum(y) / n
    num = 0.0
    den = 0.0
    for i in range(n):
        dw = (1.0 if w[i] == 1 else 0.0) - w_bar
        num += dw * (y[i] - y_bar)
        den += dw * dw
    return num / den, w_bar, y_bar


def pseudo_outcomes(y, w, tau: float, w_bar: float, y_bar: float) -> np.ndarray:
    """Gradient pseudo-outcomes used by the split criterion; they mean to ~0."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w)
    n = y.size
    a = 0.0
    for i in range(n):
        dw = (1.0 if w[i] == 1 else 0.0) - w_bar
        a += dw * dw
    a /= n
    if a <= 0.0:
        raise DegenerateNodeError("zero treatment variance in node")
    rho = np.empty(n)
    for i in range(n):
        dw = (1.0 if w[i] == 1 else 0.0) - w_bar
        rho[i] = dw * (y[i] - y_bar - tau * dw) / a
    return rho


def best_split(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    candidate_features,
    min_leaf: int,
) -> tuple[int, float] | None:
    """Exhaustive best axis-aligned split of one node.

    Maximizes sum over children of (sum of pseudo-outcomes)^2 / child size
    over all adjacent-midpoint thresholds of the candidate features, subject
    to both children keeping `min_leaf` rows per treatment arm. Ties prefer
    the lowest feature index, then the lowest threshold. Returns None when no
    valid split exists.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w)
    n1 = int(np.count_nonzero(w == 1))
    n0 = w.size - n1
    if n1 == 0 or n0 == 0:
        return None
    tau, w_bar, y_bar = node_tau(y, w)
    rho = pseudo_outcomes(y, w, tau, w_bar, y_bar)

    best = None
    best_crit = -np.inf
    for f in sorted(int(f) for f in candidate_features):
        vals = x[:, f]
        order = np.argsort(vals, kind="stable")
        # per distinct value: sequential sums in ascending (value, row) order
        c1 = 0
        c0 = 0
        s = 0.0
        total = 0.0
        groups = []  # (value, n1, n0, rho_sum)
        i = 0
        while i < vals.size:
            j = i
            g1 = 0
            g0 = 0
            gs = 0.0
            v = vals[order[i]]
            while j < vals.size and vals[order[j]] == v:
                r = order[j]
                if w[r] == 1:
                    g1 += 1
                else:
                    g0 += 1
                gs += rho[r]
                j += 1
            groups.append((v, g1, g0, gs))
            i = j
        for _, g1, g0, gs in groups:
            total += gs
        for gi in range(1, len(groups)):
            pv, g1, g0, gs = groups[gi - 1]
            c1 += g1
            c0 += g0
            s += gs
            if (
                c1 >= min_leaf
                and c0 >= min_leaf
                and n1 - c1 >= min_leaf
                and n0 - c0 >= min_leaf
            ):
                nl = c1 + c0
                nr = (n1 - c1) + (n0 - c0)
                sr = total - s
                crit = s * s / nl + sr * sr / nr
                if crit > best_crit:
                    best_crit = crit
                    best = (f, 0.5 * (pv + groups[gi][0]))
    return best


def bin_features(x: np.ndarray, max_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Map each feature to ordered bin codes; exact when distinct values fit.

    Returns (codes, bins-per-feature).
    """
    n, m = x.shape
    xb = np.empty((n, m), dtype=np.uint16)
    nbins = np.empty(m, dtype=np.int64)
    for f in range(m):
        col = x[:, f]
        uniq = np.unique(col)
        if uniq.size <= max_bins:
            xb[:, f] = np.searchsorted(uniq, col)
            nbins[f] = uniq.size
        else:
            qs = np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
            edges = np.unique(qs)
            xb[:, f] = np.searchsorted(edges, col, side="left")
            nbins[f] = edges.size + 1
    return xb, nbins


def _seq_sum(arr) -> float:
    s = 0.0
    for v in arr:
        s += v
    return s


def _tree_seed(params: ForestParams, tree_idx: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(np.uint64(params.seed & (2**64 - 1))), tree_idx])
    )


def _fit_one_tree(xb, xv, y, w, params: ForestParams, mtry: int, nbins_f, tree_idx: int) -> Tree:
    n = y.size
    rng = _tree_seed(params, tree_idx)
    sub_n = max(2, int(params.subsample_fraction * n))
    sub = rng.choice(n, size=min(sub_n, n), replace=False)
    n_honest = int(params.honesty_fraction * sub.size)
    honest = np.sort(sub[:n_honest]).astype(np.int64)
    split = np.sort(sub[n_honest:]).astype(np.int64)
    kernel_seed = rng.integers(0, 2**64, dtype=np.uint64)
    max_depth = -1 if params.max_depth is None else params.max_depth
    feat, thr, left, right, n_nodes = _kernels.grow_tree(
        xb, xv, y, w, split, params.min_leaf, max_depth, mtry, nbins_f, kernel_seed
    )
    feat = feat.copy()
    thr = thr.copy()
    left = left.copy()
    right = right.copy()
    if n_nodes == 1:
        # the splitting half found nothing: the whole subsample populates the stump
        honest = np.sort(sub).astype(np.int64)
    leaf_of = _kernels.assign_honest(feat, thr, left, right, xv, honest)
    return Tree(feat, thr, left, right, split, honest, leaf_of)


def fit_forest(ts: TrainingSet, params: ForestParams, n_jobs: int = 1) -> Forest:
    """Fit `params.num_trees` honest trees on the training set.

    Per-tree randomness derives from (seed, tree index) alone, so the result
    is identical for any `n_jobs`.
    """
    if len(ts) == 0:
        raise UnfitError("empty training set")
    w = ts.treatment.astype(np.uint8)
    n1 = int(np.count_nonzero(w == 1))
    if n1 == 0 or n1 == len(ts):
        raise UnfitError("training set holds a single treatment arm")
    xv = np.ascontiguousarray(ts.features, dtype=np.float64)
    y = np.ascontiguousarray(ts.outcomes, dtype=np.float64)
    mtry = params.resolve_mtry(xv.shape[1])
    xb, nbins_f = bin_features(xv, params.max_bins)

    if n_jobs == 1:
        trees = [
            _fit_one_tree(xb, xv, y, w, params, mtry, nbins_f, i)
            for i in range(params.num_trees)
        ]
    else:
        trees = Parallel(n_jobs=n_jobs, backend="threading")(
            delayed(_fit_one_tree)(xb, xv, y, w, params, mtry, nbins_f, i)
            for i in range(params.num_trees)
        )
    return Forest(params, ts.feature_names, len(ts), trees)


def _pack_trees(trees: list[Tree]):
    n_total = sum(t.n_nodes for t in trees)
    feat = np.empty(n_total, np.int32)
    thr = np.empty(n_total, np.float64)
    left = np.empty(n_total, np.int32)
    right = np.empty(n_total, np.int32)
    roots = np.empty(len(trees), np.int64)
    sizes = np.zeros(n_total + 1, np.int64)
    off = 0
    for b, t in enumerate(trees):
        k = t.n_nodes
        roots[b] = off
        feat[off : off + k] = t.feature
        thr[off : off + k] = t.threshold
        left[off : off + k] = np.where(t.left >= 0, t.left + off, -1).astype(np.int32)
        right[off : off + k] = np.where(t.right >= 0, t.right + off, -1).astype(np.int32)
        sizes[off + 1 : off + k + 1] = np.bincount(t.honest_leaf, minlength=k)
        off += k
    leaf_ptr = np.cumsum(sizes)
    leaf_rows = np.empty(leaf_ptr[-1], np.int64)
    off = 0
    pos = 0
    for t in trees:
        # one tree's honest rows occupy a contiguous slice of leaf_rows, grouped
        # by leaf id with the ascending-row order preserved inside each leaf
        order = np.argsort(t.honest_leaf, kind="stable")
        n = t.honest_rows.size
        leaf_rows[pos : pos + n] = t.honest_rows[order]
        pos += n
        off += t.n_nodes
    return feat, thr, left, right, roots, leaf_ptr, leaf_rows


def predict_batch(forest: Forest, ts: TrainingSet, queries: np.ndarray):
    """Vectorized prediction; returns (r_hat, n_effective, status) arrays."""
    feat, thr, left, right, roots, leaf_ptr, leaf_rows = forest.packed()
    q = np.ascontiguousarray(queries, dtype=np.float64)
    return _kernels.predict_batch(
        feat,
        thr,
        left,
        right,
        roots,
        leaf_ptr,
        leaf_rows,
        np.ascontiguousarray(ts.outcomes, dtype=np.float64),
        ts.treatment.astype(np.uint8),
        q,
        len(ts),
    )


def predict_rate(
    forest: Forest,
    ts: TrainingSet,
    query: FeatureVector | np.ndarray,
    county: CountyId | None = None,
    day: int | None = None,
) -> GrowthEstimate:
    """Growth-rate estimate at one query point.

    Raises NoSupportError when no tree lends honest weight to the query or the
    weighted support cannot identify a slope.
    """
    values = query.values if isinstance(query, FeatureVector) else np.asarray(query)
    r_hat, n_eff, status = predict_batch(forest, ts, values.reshape(1, -1))
    if status[0] == 1:
        raise NoSupportError("query landed in empty leaves in every tree")
    if status[0] == 2:
        raise NoSupportError("weighted support holds a single treatment arm")
    return GrowthEstimate(float(r_hat[0]), float(n_eff[0]), county, day)


def forest_weights(forest: Forest, ts: TrainingSet, query) -> np.ndarray:
    """Normalized similarity weights alpha_i(query); sums to 1 given support."""
    values = query.values if isinstance(query, FeatureVector) else np.asarray(query)
    feat, thr, left, right, roots, leaf_ptr, leaf_rows = forest.packed()
    alpha, support = _kernels.query_weights(
        feat, thr, left, right, roots, leaf_ptr, leaf_rows,
        np.ascontiguousarray(values, dtype=np.float64), len(ts),
    )
    if support == 0:
        raise NoSupportError("query landed in empty leaves in every tree")
    return alpha


def save_forest(forest: Forest, path) -> None:
    """Write a forest as versioned JSON; floats round-trip exactly."""
    params = forest.params
    doc = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "params": {
            "num_trees": params.num_trees,
            "subsample_fraction": params.subsample_fraction,
            "honesty_fraction": params.honesty_fraction,
            "mtry": params.mtry,
            "min_leaf": params.min_leaf,
            "max_depth": params.max_depth,
            "seed": params.seed,
            "max_bins": params.max_bins,
        },
        "feature_names": list(forest.feature_names),
        "n_rows": forest.n_rows,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "split_rows": t.split_rows.tolist(),
                "honest_rows": t.honest_rows.tolist(),
                "honest_leaf": t.honest_leaf.tolist(),
            }
            for t in forest.trees
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_forest(path) -> Forest:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FOREST_FORMAT:
        raise ValueError(f"not a forest file: {path}")
    if doc.get("version") != FOREST_VERSION:
        raise ValueError(f"unsupported forest version {doc.get('version')}")
    params = ForestParams(**doc["params"])
    trees = [
        Tree(
            np.array(t["feature"], np.int32),
            np.array(t["threshold"], np.float64),
            np.array(t["left"], np.int32),
            np.array(t["right"], np.int32),
            np.array(t["split_rows"], np.int64),
            np.array(t["honest_rows"], np.int64),
            np.array(t["honest_leaf"], np.int32),
        )
        for t in doc["trees"]
    ]
    return Forest(params, tuple(doc["feature_names"]), int(doc["n_rows"]), trees)
