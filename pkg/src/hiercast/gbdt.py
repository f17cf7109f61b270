"""Histogram-based gradient boosted regression trees with a Tweedie objective.

Trees grow leaf-wise: the open leaf with the best split gain is expanded until
the leaf budget is reached. Split gain is the standard second-order formula
g^2 / (h + lambda) with lambda = 1. The Tweedie objective uses a log link, so
predictions are strictly positive; squared error uses the identity link.
Missing feature values occupy a reserved histogram bin and are routed down a
learned default direction at each split.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import SchemaMismatchError, ValidationError
from .validation import require

logger = logging.getLogger(__name__)

LAMBDA_REG = 1.0
SCORE_CLAMP = 30.0
MODEL_FORMAT_VERSION = 1

# full-scale profiles used by the winning configuration at competition scale;
# tests and the bundled config run the desk profile instead
FULL_SCALE_POOLED_PARAMS = dict(
    objective="tweedie", tweedie_variance_power=1.1, subsample=0.5, subsample_freq=1,
    learning_rate=0.03, num_leaves=2047, min_data_in_leaf=4095, feature_fraction=0.5,
    max_bin=100, n_estimators=1300,
)
FULL_SCALE_PER_STORE_PARAMS = dict(
    objective="tweedie", tweedie_variance_power=1.1, subsample=0.6, subsample_freq=1,
    learning_rate=0.02, num_leaves=2 ** 11 - 1, min_data_in_leaf=2 ** 12 - 1,
    feature_fraction=0.6, max_bin=100,
)
FULL_SCALE_PER_STORE_TREES = {
    "CA_1": 700, "CA_2": 1100, "CA_3": 1600, "CA_4": 1500,
    "TX_1": 1000, "TX_2": 1000, "TX_3": 1000,
    "WI_1": 1600, "WI_2": 1500, "WI_3": 1100,
}
DESK_PARAMS = dict(
    objective="tweedie", tweedie_variance_power=1.1, subsample=0.9, subsample_freq=1,
    learning_rate=0.05, num_leaves=31, min_data_in_leaf=20, feature_fraction=0.9,
    max_bin=63, n_estimators=100,
)


# ---------------------------------------------------------------------------
# Tweedie objective
# ---------------------------------------------------------------------------

def tweedie_loss(y, y_pred, p: float = 1.5):
    """Per-example Tweedie loss -y * yhat^(1-p)/(1-p) + yhat^(2-p)/(2-p).

    Equals half the Tweedie unit deviance up to a term that depends on y only,
    so it shares minimizer (yhat = y) and differences with the deviance.
    """
    require(1.0 < p < 2.0, f"tweedie variance power must lie in (1, 2), got {p}")
    y = np.asarray(y, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if (y_pred <= 0).any():
        raise ValidationError("tweedie_loss: predictions must be strictly positive")
    return -y * y_pred ** (1.0 - p) / (1.0 - p) + y_pred ** (2.0 - p) / (2.0 - p)


def tweedie_grad_hess(y, score, p: float = 1.5):
    """Gradient and hessian of the Tweedie loss w.r.t. the log-link score F.

    g = -y e^{(1-p)F} + e^{(2-p)F};  h = -(1-p) y e^{(1-p)F} + (2-p) e^{(2-p)F}.
    h > 0 for y >= 0, p in (1, 2). Scores are clamped to avoid overflow.
    """
    require(1.0 < p < 2.0, f"tweedie variance power must lie in (1, 2), got {p}")
    y = np.asarray(y, dtype=np.float64)
    f = np.clip(np.asarray(score, dtype=np.float64), -SCORE_CLAMP, SCORE_CLAMP)
    a = np.exp((1.0 - p) * f)
    b = np.exp((2.0 - p) * f)
    grad = -y * a + b
    hess = -(1.0 - p) * y * a + (2.0 - p) * b
    return grad, hess


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

@dataclass
class BinnedMatrix:
    """Quantile-binned features: code 0 is the reserved missing bin."""

    codes: np.ndarray               # (n, F) uint16
    thresholds: list[np.ndarray]    # per feature, raw-value upper edges of bins 1..B-1
    n_bins: np.ndarray              # per feature, count of value bins (excludes missing)


def _feature_thresholds(values: np.ndarray, max_bin: int) -> np.ndarray:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return np.empty(0)
    uniq = np.unique(finite)
    if len(uniq) <= max_bin:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(finite, np.linspace(0.0, 1.0, max_bin + 1)[1:-1])
    return np.unique(qs)


def build_histograms(values: np.ndarray, max_bin: int) -> BinnedMatrix:
    """Bin every feature into at most max_bin quantile-based value bins.

    Features with no more than max_bin distinct values are binned losslessly.
    """
    require(max_bin >= 2, f"max_bin must be >= 2, got {max_bin}")
    values = np.asarray(values, dtype=np.float64)
    require(values.ndim == 2, "build_histograms expects a 2-D matrix")
    n, n_features = values.shape
    codes = np.zeros((n, n_features), dtype=np.uint16)
    thresholds = []
    n_bins = np.zeros(n_features, dtype=np.int64)
    for f in range(n_features):
        col = values[:, f]
        thr = _feature_thresholds(col, max_bin)
        thresholds.append(thr)
        finite = np.isfinite(col)
        if finite.any():
            codes[finite, f] = np.searchsorted(thr, col[finite], side="left") + 1
            n_bins[f] = len(thr) + 1
    return BinnedMatrix(codes=codes, thresholds=thresholds, n_bins=n_bins)


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------

@dataclass
class Tree:
    """Flat array-of-fields binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            feat = self.feature[cur]
            x = X[idx, feat]
            miss = ~np.isfinite(x)
            go_left = np.where(miss, self.missing_left[cur], x <= self.threshold[cur])
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


class _NodeState:
    __slots__ = ("node_id", "rows", "hist", "g_sum", "h_sum", "best")

    def __init__(self, node_id, rows, hist, g_sum, h_sum):
        self.node_id = node_id
        self.rows = rows
        self.hist = hist
        self.g_sum = g_sum
        self.h_sum = h_sum
        self.best = None   # (gain, feature, bin, missing_left)


def _node_histogram(codes_sub, g, h, rows, bmax):
    block = codes_sub[rows]
    n_feat = block.shape[1]
    offsets = (np.arange(n_feat, dtype=np.int64) * bmax)[None, :]
    flat = (block.astype(np.int64) + offsets).ravel()
    size = n_feat * bmax
    gw = np.repeat(g[rows], n_feat)
    hw = np.repeat(h[rows], n_feat)
    hist = np.empty((3, n_feat, bmax))
    hist[0] = np.bincount(flat, weights=gw, minlength=size).reshape(n_feat, bmax)
    hist[1] = np.bincount(flat, weights=hw, minlength=size).reshape(n_feat, bmax)
    hist[2] = np.bincount(flat, minlength=size).reshape(n_feat, bmax)
    return hist


def _leaf_score(g_sum, h_sum):
    return g_sum * g_sum / (h_sum + LAMBDA_REG)


def _best_split(hist, g_sum, h_sum, count, min_data):
    """Best (gain, feature_pos, bin, missing_left) over a node histogram.

    Ties break toward the lowest feature position, then the lowest bin, then
    the missing-left variant, so growth is fully deterministic.
    """
    gh, hh, ch = hist
    n_feat, bmax = gh.shape
    if bmax < 3:
        return None
    cg = np.cumsum(gh[:, 1:-1], axis=1)
    chm = np.cumsum(hh[:, 1:-1], axis=1)
    cc = np.cumsum(ch[:, 1:-1], axis=1)
    parent = _leaf_score(g_sum, h_sum)

    best = None
    for missing_left in (True, False):
        if missing_left:
            gl = cg + gh[:, :1]
            hl = chm + hh[:, :1]
            cl = cc + ch[:, :1]
        else:
            gl, hl, cl = cg, chm, cc
        gr = g_sum - gl
        hr = h_sum - hl
        cr = count - cl
        with np.errstate(invalid="ignore"):
            gain = _leaf_score(gl, hl) + _leaf_score(gr, hr) - parent
        valid = (cl >= min_data) & (cr >= min_data)
        gain = np.where(valid, gain, -np.inf)
        pos = int(np.argmax(gain))
        g_val = float(gain.ravel()[pos])
        f, b = divmod(pos, gain.shape[1])
        cand = (g_val, f, b + 1, missing_left)
        if best is None or cand[0] > best[0] or (
                cand[0] == best[0] and (cand[1], cand[2], not cand[3]) < (best[1], best[2], not best[3])):
            best = cand
    if best is None or not np.isfinite(best[0]) or best[0] <= 0.0:
        return None
    return best


def _grow_tree(binned, feat_pos, g, h, rows, num_leaves, min_data, learning_rate, thresholds):
    codes_sub = binned.codes[:, feat_pos]
    bmax = int(binned.n_bins.max()) + 1 if binned.n_bins.size else 1

    feature = [-1]
    threshold = [0.0]
    missing_left = [False]
    left = [-1]
    right = [-1]
    value = [0.0]

    root_hist = _node_histogram(codes_sub, g, h, rows, bmax)
    root = _NodeState(0, rows, root_hist, float(g[rows].sum()), float(h[rows].sum()))
    root.best = _best_split(root_hist, root.g_sum, root.h_sum, len(rows), min_data)
    open_leaves = [root]
    n_leaves = 1

    while n_leaves < num_leaves:
        candidates = [nd for nd in open_leaves if nd.best is not None]
        if not candidates:
            break
        node = max(candidates, key=lambda nd: (nd.best[0], -nd.node_id))
        gain, fpos, t, miss_left = node.best
        open_leaves.remove(node)

        col = codes_sub[node.rows, fpos]
        go_left = np.where(col == 0, miss_left, col <= t)
        rows_l = node.rows[go_left]
        rows_r = node.rows[~go_left]

        if len(rows_l) <= len(rows_r):
            hist_l = _node_histogram(codes_sub, g, h, rows_l, bmax)
            hist_r = node.hist - hist_l
        else:
            hist_r = _node_histogram(codes_sub, g, h, rows_r, bmax)
            hist_l = node.hist - hist_r

        for rows_c, hist_c in ((rows_l, hist_l), (rows_r, hist_r)):
            child_id = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            missing_left.append(False)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            child = _NodeState(child_id, rows_c, hist_c,
                               float(g[rows_c].sum()), float(h[rows_c].sum()))
            child.best = _best_split(hist_c, child.g_sum, child.h_sum, len(rows_c), min_data)
            open_leaves.append(child)

        feature[node.node_id] = int(feat_pos[fpos])
        # t can point one past the last edge: a pure missing-separation split
        # (every finite value goes left, missing rows take the other branch)
        thr_arr = thresholds[feat_pos[fpos]]
        threshold[node.node_id] = float(thr_arr[t - 1]) if t - 1 < len(thr_arr) else np.inf
        missing_left[node.node_id] = bool(miss_left)
        left[node.node_id] = len(feature) - 2
        right[node.node_id] = len(feature) - 1
        n_leaves += 1

    for nd in open_leaves:
        value[nd.node_id] = -learning_rate * nd.g_sum / (nd.h_sum + LAMBDA_REG)

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold),
        missing_left=np.asarray(missing_left, dtype=bool),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value),
    )


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------

class GradientBoostedTrees(BaseEstimator, RegressorMixin):
    """Gradient boosted regression trees over a binned feature matrix.

    Parameters mirror the usual GBDT vocabulary: leaf-wise growth capped at
    ``num_leaves``, per-iteration row subsampling (``subsample`` every
    ``subsample_freq`` iterations), per-tree feature sampling
    (``feature_fraction``), and quantile binning at ``max_bin`` bins. With
    ``objective='tweedie'`` scores live on the log scale and predictions are
    exp(score); with ``objective='squared_error'`` scores are predictions.
    Fitting is deterministic given ``random_state``.
    """

    def __init__(self, objective="tweedie", tweedie_variance_power=1.1,
                 learning_rate=0.05, num_leaves=31, min_data_in_leaf=20,
                 feature_fraction=1.0, subsample=1.0, subsample_freq=1,
                 max_bin=63, n_estimators=100, random_state=0):
        self.objective = objective
        self.tweedie_variance_power = tweedie_variance_power
        self.learning_rate = learning_rate
        self.num_leaves = num_leaves
        self.min_data_in_leaf = min_data_in_leaf
        self.feature_fraction = feature_fraction
        self.subsample = subsample
        self.subsample_freq = subsample_freq
        self.max_bin = max_bin
        self.n_estimators = n_estimators
        self.random_state = random_state

    def _check_params(self):
        require(self.objective in ("tweedie", "squared_error"),
                f"unknown objective {self.objective!r}")
        if self.objective == "tweedie":
            require(1.0 < self.tweedie_variance_power < 2.0,
                    "tweedie_variance_power must lie in (1, 2)")
        require(self.num_leaves >= 2, "num_leaves must be >= 2")
        require(self.max_bin >= 2, "max_bin must be >= 2")
        require(self.min_data_in_leaf >= 1, "min_data_in_leaf must be >= 1")
        require(0.0 < self.feature_fraction <= 1.0, "feature_fraction must be in (0, 1]")
        require(0.0 < self.subsample <= 1.0, "subsample must be in (0, 1]")
        require(self.subsample_freq >= 1, "subsample_freq must be >= 1")
        require(self.n_estimators >= 0, "n_estimators must be >= 0")

    def _grad_hess(self, y, score):
        if self.objective == "tweedie":
            return tweedie_grad_hess(y, score, self.tweedie_variance_power)
        return score - y, np.ones_like(y)

    def fit(self, X, y, schema_hash=None):
        self._check_params()
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        require(X.ndim == 2 and len(X) == len(y), "X must be (n, d) with matching y")
        require(len(y) > 0, "cannot fit on an empty matrix")
        require(np.isfinite(y).all(), "targets must be finite")
        if np.isinf(X).any():
            raise ValidationError("features must not contain inf (NaN marks missing)")
        if self.objective == "tweedie":
            require((y >= 0).all(), "tweedie objective needs non-negative targets")

        n, d = X.shape
        binned = build_histograms(X, self.max_bin)
        if self.objective == "tweedie":
            self.base_score_ = float(np.log(max(y.mean(), 1e-9)))
        else:
            self.base_score_ = float(y.mean())

        rng = np.random.default_rng(self.random_state)
        score = np.full(n, self.base_score_)
        trees: list[Tree] = []
        rows_all = np.arange(n)
        rows = rows_all
        n_sub = max(1, int(np.floor(self.subsample * n)))
        n_feat = max(1, int(np.ceil(self.feature_fraction * d)))

        for it in range(self.n_estimators):
            if self.subsample < 1.0 and it % self.subsample_freq == 0:
                rows = np.sort(rng.choice(n, size=n_sub, replace=False))
            feat_pos = (np.sort(rng.choice(d, size=n_feat, replace=False))
                        if self.feature_fraction < 1.0 else np.arange(d))
            g, h = self._grad_hess(y, score)
            tree = _grow_tree(binned, feat_pos, g, h, rows, self.num_leaves,
                              self.min_data_in_leaf, self.learning_rate, binned.thresholds)
            trees.append(tree)
            score += tree.predict(X)

        self.trees_ = trees
        self.n_features_in_ = d
        self.schema_hash_ = schema_hash
        return self

    def _raw_score(self, X, n_trees=None):
        X = np.asarray(X, dtype=np.float64)
        require(X.ndim == 2 and X.shape[1] == self.n_features_in_,
                f"expected {self.n_features_in_} features, got {X.shape}")
        score = np.full(X.shape[0], self.base_score_)
        for tree in self.trees_[:n_trees]:
            score += tree.predict(X)
        return score

    def _check_schema(self, schema_hash):
        if schema_hash is not None and self.schema_hash_ is not None \
                and schema_hash != self.schema_hash_:
            raise SchemaMismatchError(
                f"model was fit under schema {self.schema_hash_}, got {schema_hash}")

    def predict(self, X, schema_hash=None):
        self._check_schema(schema_hash)
        score = self._raw_score(X)
        if self.objective == "tweedie":
            return np.exp(np.clip(score, -SCORE_CLAMP, SCORE_CLAMP))
        return score

    def staged_predict(self, X):
        """Predictions after each boosting iteration (diagnostics)."""
        X = np.asarray(X, dtype=np.float64)
        score = np.full(X.shape[0], self.base_score_)
        for tree in self.trees_:
            score += tree.predict(X)
            if self.objective == "tweedie":
                yield np.exp(np.clip(score, -SCORE_CLAMP, SCORE_CLAMP))
            else:
                yield score.copy()

    # -- serialization --------------------------------------------------------

    def save(self, path) -> None:
        """Versioned binary dump; loading reproduces predictions bit-exactly."""
        meta = json.dumps({
            "format_version": MODEL_FORMAT_VERSION,
            "params": self.get_params(),
            "base_score": self.base_score_,
            "n_features_in": self.n_features_in_,
            "schema_hash": self.schema_hash_,
            "n_trees": len(self.trees_),
        }, sort_keys=True)
        arrays = {"meta": np.frombuffer(meta.encode(), dtype=np.uint8)}
        for i, t in enumerate(self.trees_):
            arrays[f"t{i}_feature"] = t.feature
            arrays[f"t{i}_threshold"] = t.threshold
            arrays[f"t{i}_missing_left"] = t.missing_left
            arrays[f"t{i}_left"] = t.left
            arrays[f"t{i}_right"] = t.right
            arrays[f"t{i}_value"] = t.value
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "GradientBoostedTrees":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("format_version") != MODEL_FORMAT_VERSION:
                raise ValidationError(f"model file {path}: unsupported format version")
            model = cls(**meta["params"])
            model.base_score_ = float(meta["base_score"])
            model.n_features_in_ = int(meta["n_features_in"])
            model.schema_hash_ = meta["schema_hash"]
            model.trees_ = [
                Tree(feature=z[f"t{i}_feature"], threshold=z[f"t{i}_threshold"],
                     missing_left=z[f"t{i}_missing_left"], left=z[f"t{i}_left"],
                     right=z[f"t{i}_right"], value=z[f"t{i}_value"])
                for i in range(int(meta["n_trees"]))
            ]
        return model


def fit_per_store(X, y, store_of_row, params: dict, n_estimators_by_store: dict | None = None,
                  schema_hash=None, random_state=0) -> dict[str, GradientBoostedTrees]:
    """One model per store, each trained only on that store's rows.

    ``n_estimators_by_store`` overrides the tree count per store (full-scale
    profile in FULL_SCALE_PER_STORE_TREES); stores with no rows are an error.
    """
    store_of_row = np.asarray(store_of_row)
    stores = sorted(set(store_of_row.tolist()))
    models: dict[str, GradientBoostedTrees] = {}
    for store in stores:
        mask = store_of_row == store
        if not mask.any():
            raise ValidationError(f"store {store!r} has no training rows")
        p = dict(params)
        if n_estimators_by_store and store in n_estimators_by_store:
            p["n_estimators"] = int(n_estimators_by_store[store])
        p.setdefault("random_state", random_state)
        model = GradientBoostedTrees(**p)
        model.fit(X[mask], y[mask], schema_hash=schema_hash)
        models[store] = model
        logger.info("per-store model %s: %d rows, %d trees", store, int(mask.sum()),
                    len(model.trees_))
    return models
