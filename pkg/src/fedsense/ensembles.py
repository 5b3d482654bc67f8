"""Bagging, random forest, AdaBoost and gradient-boosted tree ensembles.

Every trained model emits hard legitimacy estimates in {0, 1}; ties always
resolve to 1 (legitimate).
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fedsense import _kernels
from fedsense.errors import ConfigurationError, DomainError, TrainingError
from fedsense.trees import Tree, TreeParams, _check_matrix, fit_tree

KINDS = ("bagging", "adaboost", "gboost")
BASES = ("tree_classifier", "tree_regressor", "random_forest", "gboost")
ALLOWED = {
    ("bagging", "tree_classifier"),
    ("bagging", "random_forest"),
    ("bagging", "gboost"),
    ("adaboost", "tree_regressor"),
    ("gboost", "tree_regressor"),
}

MODEL_FORMAT = "fedsense-model"
MODEL_VERSION = 1

# floor on the weighted error of a perfect AdaBoost member so its weight stays finite
_ADA_ERR_FLOOR = 1e-10


@dataclass(frozen=True)
class EnsembleSpec:
    """Ensemble configuration.

    ``inner`` configures nested members: for ``base="random_forest"`` it is
    the forest spec, for ``base="gboost"`` the boosted model spec. It is
    filled with defaults when omitted.
    """

    kind: str
    base: str
    n_estimators: int
    learning_rate: float = 0.1
    tree_params: TreeParams = field(default_factory=TreeParams)
    rng_seed: int = 0
    inner: "EnsembleSpec | None" = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown ensemble kind {self.kind!r}")
        if self.base not in BASES:
            raise ConfigurationError(f"unknown base estimator {self.base!r}")
        if (self.kind, self.base) not in ALLOWED:
            raise ConfigurationError(f"unsupported combination {self.kind} over {self.base}")
        if self.n_estimators < 1:
            raise ConfigurationError("n_estimators must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.inner is None:
            if self.base == "random_forest":
                object.__setattr__(self, "inner", forest_spec())
            elif self.base == "gboost":
                object.__setattr__(self, "inner", gboost_spec(50))

    @property
    def label(self):
        return f"{self.kind}({self.base},{self.n_estimators})"

    def to_dict(self):
        return {
            "kind": self.kind,
            "base": self.base,
            "n_estimators": self.n_estimators,
            "learning_rate": self.learning_rate,
            "tree_params": self.tree_params.to_dict(),
            "rng_seed": self.rng_seed,
            "inner": None if self.inner is None else self.inner.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["tree_params"] = TreeParams.from_dict(d["tree_params"])
        if d.get("inner") is not None:
            d["inner"] = cls.from_dict(d["inner"])
        return cls(**d)


def forest_spec(n_trees=10, n_features=11, tree_params=None):
    """Random forest as bagging over trees that see sqrt(d) features per split."""
    tp = tree_params or TreeParams(
        feature_subsample=max(1, int(math.isqrt(n_features)))
    )
    return EnsembleSpec("bagging", "tree_classifier", n_trees, tree_params=tp)


def gboost_spec(n_estimators, learning_rate=0.1, max_depth=3, rng_seed=0):
    tp = TreeParams(max_depth=max_depth, min_samples_leaf=2, criterion="mse")
    return EnsembleSpec("gboost", "tree_regressor", n_estimators, learning_rate, tp, rng_seed)


def adaboost_spec(n_estimators, max_depth=3, rng_seed=0):
    tp = TreeParams(max_depth=max_depth, min_samples_leaf=2, criterion="mse")
    return EnsembleSpec("adaboost", "tree_regressor", n_estimators, tree_params=tp, rng_seed=rng_seed)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    spec: EnsembleSpec
    members: list
    weights: np.ndarray
    init_score: float = 0.0
    decision_threshold: float = 0.5

    @property
    def n_features(self):
        m = self.members[0]
        return m.n_features

    def decision_values(self, X):
        """Raw ensemble output whose sign (>= 0 means 1) is the class."""
        X = _check_matrix(X, self.n_features)
        kind = self.spec.kind
        if kind == "bagging":
            votes = np.zeros(X.shape[0])
            for m in self.members:
                votes += _member_classes(m, X)
            # positive share minus half; zero is a tie
            return votes - 0.5 * len(self.members)
        if kind == "adaboost":
            score = np.zeros(X.shape[0])
            for a, tree in zip(self.weights, self.members):
                score += a * _signed(tree.predict_values(X))
            return score
        score = np.full(X.shape[0], self.init_score)
        for a, tree in zip(self.weights, self.members):
            score += a * tree.predict_values(X)
        return score

    def predict(self, X):
        return (self.decision_values(X) >= 0.0).astype(np.int64)

    def predict_proba_legit(self, X):
        """Sigmoid of the boosted score; only defined for gboost models."""
        if self.spec.kind != "gboost":
            raise ConfigurationError("probabilities only exist for gboost models")
        return _sigmoid(self.decision_values(X))

    def __eq__(self, other):
        if not isinstance(other, TrainedModel):
            return NotImplemented
        return (
            self.spec == other.spec
            and len(self.members) == len(other.members)
            and all(a == b for a, b in zip(self.members, other.members))
            and np.array_equal(self.weights, other.weights)
            and self.init_score == other.init_score
        )

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "weights": self.weights.tolist(),
            "init_score": self.init_score,
            "members": [
                {"type": "tree" if isinstance(m, Tree) else "model", "body": m.to_dict()}
                for m in self.members
            ],
        }

    @classmethod
    def from_dict(cls, d):
        members = [
            Tree.from_dict(m["body"]) if m["type"] == "tree" else cls.from_dict(m["body"])
            for m in d["members"]
        ]
        return cls(
            spec=EnsembleSpec.from_dict(d["spec"]),
            members=members,
            weights=np.asarray(d["weights"], dtype=np.float64),
            init_score=float(d["init_score"]),
        )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _signed(values):
    return np.where(values >= 0.0, 1.0, -1.0)


def _member_classes(m, X):
    if isinstance(m, Tree):
        return m.predict_classes(X)
    return m.predict(X)


def _labels(y):
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise TrainingError("labels must be 0 (fake) or 1 (legitimate)")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set must contain both classes")
    return y.astype(np.float64)


def _fit_member(spec, X, y, seed):
    if spec.base == "tree_classifier":
        return fit_tree(X, y, spec.tree_params, rng_seed=seed)
    inner = replace(spec.inner, rng_seed=seed)
    return fit_arrays(inner, X, y)


def _fit_bagging(spec, X, y, n_jobs):
    n = X.shape[0]

    def one(m):
        # per-member stream depends only on (spec seed, member index)
        rng = np.random.default_rng([spec.rng_seed, m])
        idx = rng.integers(0, n, size=n)
        yb = y[idx]
        if spec.base != "tree_classifier" and len(np.unique(yb)) < 2:
            # boosted/forest members need both classes; redraw deterministically
            for _ in range(100):
                idx = rng.integers(0, n, size=n)
                yb = y[idx]
                if len(np.unique(yb)) == 2:
                    break
        seed = int(rng.integers(0, 2**63 - 1))
        return _fit_member(spec, X[idx], yb, seed)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            members = list(ex.map(one, range(spec.n_estimators)))
    else:
        members = [one(m) for m in range(spec.n_estimators)]
    return TrainedModel(spec, members, np.ones(len(members)))


def _fit_adaboost(spec, X, y):
    n = X.shape[0]
    t = 2.0 * y - 1.0
    w = np.full(n, 1.0 / n)
    order = _kernels.presort(X)
    members, alphas = [], []
    for m in range(spec.n_estimators):
        tree = fit_tree(X, t, spec.tree_params, rng_seed=spec.rng_seed + m, sample_weight=w,
                        presorted=order)
        h = _signed(tree.predict_values(X))
        miss = h != t
        err = float(w[miss].sum() / w.sum())
        if err >= 0.5:
            # no better than chance: zero weight, and reweighting would repeat it
            members.append(tree)
            alphas.append(0.0)
            break
        perfect = err <= 0.0
        err = max(err, _ADA_ERR_FLOOR)
        alpha = 0.5 * math.log((1.0 - err) / err)
        members.append(tree)
        alphas.append(alpha)
        if perfect:
            break
        w = w * np.exp(-alpha * t * h)
        w /= w.sum()
    return TrainedModel(spec, members, np.asarray(alphas))


def logistic_loss(y, score):
    """Mean negative log-likelihood of labels ``y`` under sigmoid(score)."""
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


def _fit_gboost(spec, X, y, trace=None):
    p = y.mean()
    init = math.log(p / (1.0 - p))
    score = np.full(X.shape[0], init)
    order = _kernels.presort(X)
    members = []
    for m in range(spec.n_estimators):
        residual = y - _sigmoid(score)
        tree = fit_tree(X, residual, spec.tree_params, rng_seed=spec.rng_seed + m,
                        presorted=order)
        score = score + spec.learning_rate * tree.predict_values(X)
        members.append(tree)
        if trace is not None:
            trace.append(logistic_loss(y, score))
    return TrainedModel(spec, members, np.full(len(members), spec.learning_rate), init)


def fit_arrays(spec, X, y, n_jobs=1, trace=None):
    """Train on a raw feature matrix and 0/1 label vector."""
    X = _check_matrix(X)
    if X.shape[0] == 0:
        raise TrainingError("empty training set")
    y = _labels(y)
    if spec.kind == "bagging":
        return _fit_bagging(spec, X, y, n_jobs)
    if spec.kind == "adaboost":
        return _fit_adaboost(spec, X, y)
    return _fit_gboost(spec, X, y, trace)


def train(spec, dataset, n_jobs=1):
    """Fit ``spec`` on a Dataset's ML features and legitimacy labels."""
    if len(dataset) == 0:
        raise TrainingError("empty training set")
    return fit_arrays(spec, dataset.features(), dataset.labels, n_jobs=n_jobs)


def predict_es(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("predict_es takes a single feature vector")
    return int(model.predict(x.reshape(1, -1))[0])


def predict_batch(model, tasks):
    if len(tasks) == 0:
        return []
    return model.predict(tasks.features()).tolist()


def save_model(model, path):
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "model": model.to_dict()}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigurationError(f"{path}: not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigurationError(f"{path}: unsupported model version {doc.get('version')}")
    return TrainedModel.from_dict(doc["model"])
