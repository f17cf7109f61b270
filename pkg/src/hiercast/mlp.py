"""Feed-forward regressor with trainable categorical embeddings.

Categorical columns hold integer codes (0 reserved for unseen categories) and
are looked up in per-feature embedding tables; numeric columns are
standardized with training-range statistics and mean-imputed. Training is
mini-batch momentum SGD with a per-epoch step-decay learning rate. The
parameter sets of the final ``snapshots_to_keep`` epochs are archived so
predictions can be averaged across snapshots to cut variance.
"""

from __future__ import annotations

import json
import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import HiercastError, SchemaMismatchError, ValidationError
from .validation import require

logger = logging.getLogger(__name__)

SCORE_CLAMP = 30.0
MODEL_FORMAT_VERSION = 1

# the three windowed presets differ only in hidden widths
WINDOWED_PRESET_HIDDEN = ((64, 32), (96, 48), (128, 64))
RECENT_WINDOW_DAYS = 17 * 28


def embed_lookup(table: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Rows of an embedding table; out-of-range codes map to the reserved row 0."""
    codes = np.asarray(codes)
    safe = np.where((codes >= 0) & (codes < len(table)), codes, 0).astype(np.int64)
    return table[safe]


class EmbeddingMLPRegressor(BaseEstimator, RegressorMixin):
    """MLP over embedded categoricals plus standardized numerics.

    objective 'squared_error' emits the raw linear output; 'tweedie' treats the
    output as a log-link score, so predictions are exp(score) and strictly
    positive. Deterministic given random_state and the fixed batch order it
    induces.
    """

    def __init__(self, hidden_sizes=(64, 32), embedding_dim=8,
                 objective="squared_error", tweedie_variance_power=1.5,
                 epochs=20, batch_size=256, learning_rate=0.02, lr_decay=0.95,
                 momentum=0.9, snapshots_to_keep=5, random_state=0):
        self.hidden_sizes = hidden_sizes
        self.embedding_dim = embedding_dim
        self.objective = objective
        self.tweedie_variance_power = tweedie_variance_power
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.momentum = momentum
        self.snapshots_to_keep = snapshots_to_keep
        self.random_state = random_state

    # -- data plumbing ----------------------------------------------------------

    def _split(self, X):
        codes = X[:, self.cat_idx_].astype(np.int64) if len(self.cat_idx_) else \
            np.empty((len(X), 0), dtype=np.int64)
        numeric = X[:, self.num_idx_]
        numeric = (numeric - self.num_mean_) / self.num_std_
        numeric = np.where(np.isnan(numeric), 0.0, numeric)
        return codes, numeric

    def _init_params(self, rng):
        params = []
        for card in self.cardinalities_:
            params.append(rng.normal(0.0, 0.1, size=(card, self.embedding_dim)))
        d_in = len(self.cardinalities_) * self.embedding_dim + len(self.num_idx_)
        widths = list(self.hidden_sizes) + [1]
        for width in widths:
            scale = np.sqrt(2.0 / max(d_in, 1))
            params.append(rng.normal(0.0, scale, size=(d_in, width)))
            params.append(np.zeros(width))
            d_in = width
        return params

    def _forward(self, params, codes, numeric):
        n_emb = len(self.cardinalities_)
        parts = [embed_lookup(params[i], codes[:, i]).reshape(len(codes), -1)
                 for i in range(n_emb)]
        parts.append(numeric)
        x = np.concatenate(parts, axis=1) if parts else numeric
        activations = [x]
        pre = []
        idx = n_emb
        n_layers = len(self.hidden_sizes) + 1
        for layer in range(n_layers):
            w, b = params[idx], params[idx + 1]
            idx += 2
            z = x @ w + b
            pre.append(z)
            x = np.maximum(z, 0.0) if layer < n_layers - 1 else z
            activations.append(x)
        return activations, pre

    def _loss_grad_wrt_output(self, f, y):
        n = len(y)
        if self.objective == "squared_error":
            diff = f - y
            return 0.5 * float(np.mean(diff ** 2)), diff / n
        p = self.tweedie_variance_power
        fc = np.clip(f, -SCORE_CLAMP, SCORE_CLAMP)
        a = np.exp((1.0 - p) * fc)
        b = np.exp((2.0 - p) * fc)
        loss = float(np.mean(-y * a / (1.0 - p) + b / (2.0 - p)))
        return loss, (-y * a + b) / n

    def _loss_and_grads(self, params, codes, numeric, y):
        """Mini-batch loss and gradients aligned with the parameter list."""
        activations, pre = self._forward(params, codes, numeric)
        f = activations[-1][:, 0]
        loss, dout = self._loss_grad_wrt_output(f, y)

        grads = [np.zeros_like(p) for p in params]
        n_emb = len(self.cardinalities_)
        n_layers = len(self.hidden_sizes) + 1
        delta = dout[:, None]
        for layer in range(n_layers - 1, -1, -1):
            widx = n_emb + 2 * layer
            grads[widx] = activations[layer].T @ delta
            grads[widx + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ params[widx].T) * (pre[layer - 1] > 0)
            else:
                delta = delta @ params[widx].T
        # delta now spans the concatenated input: embeddings then numerics
        offset = 0
        for i in range(n_emb):
            d = self.embedding_dim
            seg = delta[:, offset:offset + d]
            codes_i = np.where((codes[:, i] >= 0) & (codes[:, i] < self.cardinalities_[i]),
                               codes[:, i], 0)
            np.add.at(grads[i], codes_i, seg)
            offset += d
        return loss, grads

    # -- training ----------------------------------------------------------------

    def fit(self, X, y, categorical: dict[int, int] | None = None, schema_hash=None):
        require(self.objective in ("squared_error", "tweedie"),
                f"unknown objective {self.objective!r}")
        require(self.snapshots_to_keep >= 1, "snapshots_to_keep must be >= 1")
        require(self.epochs >= 1, "epochs must be >= 1")
        require(self.embedding_dim >= 1, "embedding_dim must be >= 1")
        if self.objective == "tweedie":
            require(1.0 < self.tweedie_variance_power < 2.0,
                    "tweedie_variance_power must lie in (1, 2)")
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        require(X.ndim == 2 and len(X) == len(y) and len(y) > 0,
                "X must be (n, d) with matching nonempty y")
        if self.objective == "tweedie":
            require((y >= 0).all(), "tweedie objective needs non-negative targets")

        categorical = dict(categorical or {})
        self.cat_idx_ = np.array(sorted(categorical), dtype=np.int64)
        self.cardinalities_ = [int(categorical[i]) for i in self.cat_idx_]
        self.num_idx_ = np.array([i for i in range(X.shape[1]) if i not in categorical],
                                 dtype=np.int64)
        numeric_raw = X[:, self.num_idx_]
        with np.errstate(all="ignore"):
            self.num_mean_ = np.nan_to_num(np.nanmean(numeric_raw, axis=0), nan=0.0)
            std = np.nan_to_num(np.nanstd(numeric_raw, axis=0), nan=0.0)
        self.num_std_ = np.where(std > 0, std, 1.0)

        codes, numeric = self._split(X)
        rng = np.random.default_rng(self.random_state)
        params = self._init_params(rng)
        velocity = [np.zeros_like(p) for p in params]
        n = len(y)
        batch = min(self.batch_size, n)
        snapshots: list[list[np.ndarray]] = []

        for epoch in range(self.epochs):
            lr = self.learning_rate * self.lr_decay ** epoch
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, batch):
                sel = order[start:start + batch]
                loss, grads = self._loss_and_grads(params, codes[sel], numeric[sel], y[sel])
                if not np.isfinite(loss):
                    raise HiercastError(
                        f"training diverged at epoch {epoch} (loss {loss}); "
                        f"lr={lr:.4g}, objective={self.objective}")
                epoch_loss += loss * len(sel)
                for v, p, g in zip(velocity, params, grads):
                    v *= self.momentum
                    v -= lr * g
                    p += v
            if epoch >= self.epochs - self.snapshots_to_keep:
                snapshots.append([p.copy() for p in params])
            logger.debug("epoch %d: loss %.6f lr %.5f", epoch, epoch_loss / n, lr)

        self.params_ = params
        self.snapshots_ = snapshots
        self.n_features_in_ = X.shape[1]
        self.schema_hash_ = schema_hash
        return self

    # -- inference ----------------------------------------------------------------

    def _check_schema(self, schema_hash):
        if schema_hash is not None and self.schema_hash_ is not None \
                and schema_hash != self.schema_hash_:
            raise SchemaMismatchError(
                f"model was fit under schema {self.schema_hash_}, got {schema_hash}")

    def _predict_with(self, params, X):
        X = np.asarray(X, dtype=np.float64)
        require(X.ndim == 2 and X.shape[1] == self.n_features_in_,
                f"expected {self.n_features_in_} features, got {X.shape}")
        codes, numeric = self._split(X)
        activations, _ = self._forward(params, codes, numeric)
        f = activations[-1][:, 0]
        if self.objective == "tweedie":
            return np.exp(np.clip(f, -SCORE_CLAMP, SCORE_CLAMP))
        return f

    def predict(self, X, schema_hash=None):
        """Final-epoch parameters only; see predict_averaged for snapshot means."""
        self._check_schema(schema_hash)
        return self._predict_with(self.params_, X)

    def predict_snapshots(self, X, schema_hash=None):
        """(n_snapshots, n_rows) predictions, one row per archived epoch."""
        self._check_schema(schema_hash)
        return np.stack([self._predict_with(p, X) for p in self.snapshots_])

    # -- serialization ---------------------------------------------------------------

    def save(self, path) -> None:
        meta = json.dumps({
            "format_version": MODEL_FORMAT_VERSION,
            "params": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in self.get_params().items()},
            "n_features_in": self.n_features_in_,
            "schema_hash": self.schema_hash_,
            "cardinalities": self.cardinalities_,
            "n_param_arrays": len(self.params_),
            "n_snapshots": len(self.snapshots_),
        }, sort_keys=True)
        arrays = {
            "meta": np.frombuffer(meta.encode(), dtype=np.uint8),
            "cat_idx": self.cat_idx_, "num_idx": self.num_idx_,
            "num_mean": self.num_mean_, "num_std": self.num_std_,
        }
        for i, p in enumerate(self.params_):
            arrays[f"p{i}"] = p
        for s, snap in enumerate(self.snapshots_):
            for i, p in enumerate(snap):
                arrays[f"s{s}_{i}"] = p
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "EmbeddingMLPRegressor":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("format_version") != MODEL_FORMAT_VERSION:
                raise ValidationError(f"model file {path}: unsupported format version")
            kwargs = dict(meta["params"])
            if isinstance(kwargs.get("hidden_sizes"), list):
                kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
            model = cls(**kwargs)
            model.n_features_in_ = int(meta["n_features_in"])
            model.schema_hash_ = meta["schema_hash"]
            model.cardinalities_ = [int(c) for c in meta["cardinalities"]]
            model.cat_idx_ = z["cat_idx"]
            model.num_idx_ = z["num_idx"]
            model.num_mean_ = z["num_mean"]
            model.num_std_ = z["num_std"]
            model.params_ = [z[f"p{i}"] for i in range(int(meta["n_param_arrays"]))]
            model.snapshots_ = [
                [z[f"s{s}_{i}"] for i in range(int(meta["n_param_arrays"]))]
                for s in range(int(meta["n_snapshots"]))
            ]
        return model


def predict_averaged(models, X, schema_hash=None) -> np.ndarray:
    """Arithmetic mean over every snapshot of every model in the group."""
    models = list(models)
    require(len(models) > 0, "predict_averaged needs at least one model")
    preds = [m.predict_snapshots(X, schema_hash=schema_hash) for m in models]
    return np.concatenate(preds, axis=0).mean(axis=0)
