"""CART decision trees (gini classifier and mse regressor).

Trees are stored as flat node arrays; node 0 is the root, children always
have larger ids than their parent and a node with ``feature == -1`` is a
leaf. Prediction descends left iff
``x[feature] <= threshold``.
"""

from dataclasses import dataclass

import numpy as np

from fedsense import _kernels
from fedsense.errors import ConfigurationError, DomainError

CRITERIA = ("gini", "mse")


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 8
    min_samples_leaf: int = 2
    criterion: str = "gini"
    feature_subsample: int | None = None

    def __post_init__(self):
        if self.max_depth < 0:
            raise ConfigurationError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ConfigurationError("min_samples_leaf must be >= 1")
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"unknown criterion {self.criterion!r}")
        if self.feature_subsample is not None and self.feature_subsample < 1:
            raise ConfigurationError("feature_subsample must be >= 1")

    def to_dict(self):
        return {
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "criterion": self.criterion,
            "feature_subsample": self.feature_subsample,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Tree:
    """A fitted tree. Arrays are indexed by node id."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def is_leaf(self, node=0):
        return self.feature[node] < 0

    def predict_values(self, X):
        X = _check_matrix(X, self.n_features)
        return _kernels.predict_tree(
            X, self.feature, self.threshold, self.left, self.right, self.value
        )

    def predict_classes(self, X):
        return (self.predict_values(X) >= 0.5).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return self.n_features == other.n_features and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "value")
        )

    def to_dict(self):
        return {
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_features=int(d["n_features"]),
        )


def _check_matrix(X, n_features=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise DomainError("feature matrix must be 2-dimensional")
    if n_features is not None and X.shape[1] != n_features:
        raise DomainError(
            f"expected {n_features} features, got {X.shape[1]}"
        )
    if not np.isfinite(X).all():
        raise DomainError("feature values must be finite")
    return X


def impurity_decrease(gain, total_weight, criterion):
    """Convert a raw sum-of-squares gain into a weighted impurity decrease.

    For binary targets the gini decrease is exactly twice the mse decrease,
    which is why one split kernel serves both criteria.
    """
    scale = 2.0 if criterion == "gini" else 1.0
    return scale * gain / total_weight


def fit_tree(X, targets, params=None, rng_seed=None, sample_weight=None, presorted=None):
    """Grow a tree greedily, maximizing impurity decrease at each split.

    ``presorted`` may carry ``_kernels.presort(X)`` when the same matrix is
    fit repeatedly (boosting rounds).
    """
    params = params or TreeParams()
    X = _check_matrix(X)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    n, d = X.shape
    if n == 0:
        raise DomainError("cannot fit a tree on empty data")
    if y.shape != (n,):
        raise DomainError(f"{n} rows but {y.shape[0]} targets")
    if not np.isfinite(y).all():
        raise DomainError("targets must be finite")
    if params.criterion == "gini" and not np.isin(y, (0.0, 1.0)).all():
        raise DomainError("gini criterion needs targets in {0, 1}")
    if sample_weight is None:
        w = np.ones(n)
    else:
        w = np.ascontiguousarray(sample_weight, dtype=np.float64)
        if w.shape != (n,) or (w < 0).any() or not np.isfinite(w).all():
            raise DomainError("sample_weight must be finite, >= 0, one per row")

    rng = np.random.default_rng(rng_seed)
    all_features = np.arange(d, dtype=np.int64)
    k = params.feature_subsample
    if k is not None:
        k = min(k, d)
    min_leaf = params.min_samples_leaf
    order = _kernels.presort(X) if presorted is None else presorted
    in_node = np.zeros(n, dtype=np.bool_)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        ww = w[rows]
        tot = ww.sum()
        v = float(np.dot(ww, y[rows]) / tot) if tot > 0 else float(y[rows].mean())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(v)
        return len(feature) - 1

    root_rows = np.arange(n, dtype=np.int64)
    stack = [(new_node(root_rows), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        yr = y[rows]
        if depth >= params.max_depth or len(rows) < 2 * min_leaf or (yr == yr[0]).all():
            continue
        if k is None:
            feats = all_features
        else:
            feats = np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)
        in_node[rows] = True
        f, t, _ = _kernels.best_split(X, y, w, rows, feats, min_leaf, order, in_node)
        in_node[rows] = False
        if f < 0:
            continue
        go_left = X[rows, f] <= t
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node] = f
        threshold[node] = t
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree is expanded first
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_features=d,
    )


def predict_value(tree, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("predict_value takes a single feature vector")
    return float(tree.predict_values(x.reshape(1, -1))[0])


def predict_class(tree, x):
    """1 (legitimate) iff the leaf value is >= 0.5."""
    return int(predict_value(tree, x) >= 0.5)
