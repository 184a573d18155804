"""In-repo random forest over patch feature vectors.

Breiman-style ensemble: per-tree bootstrap, per-split random feature subset
of size floor(sqrt(d)), axis-aligned thresholds chosen by weighted Gini
impurity, leaves holding the weighted class distribution. Averaged leaf
distributions give the per-prediction confidence used downstream for
precision boosting.

Class imbalance is handled before training: either undersampling of the
dominant classes to a cap of the smallest support, or per-row statistical
weights total / (n_classes * support).
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DataError

_MODEL_MAGIC = b"PCDM"
_MODEL_VERSION = 1


@dataclass
class TrainConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # default floor(sqrt(d))
    balancing: str = "none"                # none | undersample | class_weights
    cap_ratio: float = 100.0
    folds: int = 3
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.folds < 2:
            raise DataError("folds must be >= 2")
        if self.cap_ratio < 1:
            raise DataError("cap_ratio must be >= 1")
        if self.balancing not in ("none", "undersample", "class_weights"):
            raise DataError(f"unknown balancing strategy {self.balancing!r}")


@dataclass
class Tree:
    feature: np.ndarray    # int32, -1 for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    dist: np.ndarray       # (n_nodes, n_classes) float64, rows sum to 1

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf distribution per row, iterative traversal."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return self.dist[node]


@dataclass
class ForestModel:
    classes: np.ndarray
    feature_names: tuple
    trees: list
    importances: np.ndarray
    config: TrainConfig
    degenerate: bool = False


@dataclass
class Prediction:
    patch_id: str
    class_label: int
    confidence: float


def _gini(class_weights: np.ndarray) -> float:
    total = class_weights.sum()
    if total <= 0:
        return 0.0
    p = class_weights / total
    return float(1.0 - (p * p).sum())


class _TreeBuilder:
    """Grows one tree; accumulates impurity-decrease importances."""

    def __init__(self, X, y, w, n_classes, config: TrainConfig, m_features, rng):
        self.X, self.y, self.w = X, y, w
        self.k = n_classes
        self.cfg = config
        self.m = m_features
        self.rng = rng
        self.nodes = []          # (feature, threshold, left, right, dist)
        self.importance = np.zeros(X.shape[1])
        self.w_root = None

    def build(self, rows: np.ndarray) -> int:
        self.w_root = self.w[rows].sum()
        return self._grow(rows, depth=0)

    def _leaf(self, rows) -> int:
        counts = np.bincount(self.y[rows], weights=self.w[rows], minlength=self.k)
        total = counts.sum()
        dist = counts / total if total > 0 else np.full(self.k, 1.0 / self.k)
        self.nodes.append([-1, 0.0, -1, -1, dist])
        return len(self.nodes) - 1

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        y = self.y[rows]
        if rows.size < 2 * self.cfg.min_samples_leaf or (y == y[0]).all() \
                or (self.cfg.max_depth is not None and depth >= self.cfg.max_depth):
            return self._leaf(rows)
        split = self._best_split(rows)
        if split is None:
            return self._leaf(rows)
        feat, thr, decrease = split
        self.importance[feat] += decrease / self.w_root
        node_id = len(self.nodes)
        self.nodes.append([feat, thr, -1, -1, None])
        go_left = self.X[rows, feat] <= thr
        self.nodes[node_id][2] = self._grow(rows[go_left], depth + 1)
        self.nodes[node_id][3] = self._grow(rows[~go_left], depth + 1)
        return node_id

    def _best_split(self, rows: np.ndarray):
        d = self.X.shape[1]
        feats = np.sort(self.rng.choice(d, size=self.m, replace=False))
        w = self.w[rows]
        y = self.y[rows]
        parent_counts = np.bincount(y, weights=w, minlength=self.k)
        w_total = w.sum()
        parent_gini = _gini(parent_counts)
        msl = self.cfg.min_samples_leaf
        best = None  # (weighted_child_impurity, feat, thr)
        for feat in feats:
            values = self.X[rows, feat]
            order = np.argsort(values, kind="stable")
            v = values[order]
            if v[0] == v[-1]:
                continue
            W = np.zeros((rows.size, self.k))
            W[np.arange(rows.size), y[order]] = w[order]
            cum = W.cumsum(axis=0)
            # split after position i: left = 0..i
            cand = np.nonzero(v[:-1] != v[1:])[0]
            cand = cand[(cand + 1 >= msl) & (rows.size - cand - 1 >= msl)]
            if cand.size == 0:
                continue
            left = cum[cand]
            right = parent_counts - left
            wl = left.sum(axis=1)
            wr = w_total - wl
            gl = 1.0 - (np.square(left).sum(axis=1) / np.square(wl))
            gr = 1.0 - (np.square(right).sum(axis=1) / np.square(wr))
            child = (wl * gl + wr * gr) / w_total
            i = int(np.argmin(child))
            if best is None or child[i] < best[0]:
                thr = (v[cand[i]] + v[cand[i] + 1]) / 2.0
                best = (float(child[i]), int(feat), thr)
        if best is None:
            return None
        decrease = w_total * (parent_gini - best[0])
        if decrease <= 0:
            return None
        return best[1], best[2], decrease

    def finish(self) -> Tree:
        n = len(self.nodes)
        tree = Tree(
            feature=np.array([nd[0] for nd in self.nodes], dtype=np.int32),
            threshold=np.array([nd[1] for nd in self.nodes], dtype=np.float64),
            left=np.array([nd[2] for nd in self.nodes], dtype=np.int32),
            right=np.array([nd[3] for nd in self.nodes], dtype=np.int32),
            dist=np.zeros((n, self.k)),
        )
        for i, nd in enumerate(self.nodes):
            if nd[4] is not None:
                tree.dist[i] = nd[4]
        return tree


def balance(X: np.ndarray, y: np.ndarray, strategy: str = "none",
            cap_ratio: float = 100.0, seed: int = 0):
    """Rebalance a labeled dataset.

    undersample: every class is randomly cut to cap_ratio x the smallest
    class support (seeded, without replacement); weights stay 1.
    class_weights: rows untouched, weight_c = total / (n_classes * support_c).
    Returns (X, y, weights, kept_row_indices).
    """
    classes, support = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise DataError("balancing needs at least 2 classes")
    if (support == 0).any():
        raise DataError("a class has zero support")
    idx = np.arange(y.size)
    if strategy == "none":
        return X, y, np.ones(y.size), idx
    if strategy == "undersample":
        cap = int(np.floor(cap_ratio * support.min()))
        rng = np.random.default_rng(seed)
        keep = []
        for c in classes:
            rows = np.nonzero(y == c)[0]
            if rows.size > cap:
                rows = np.sort(rng.choice(rows, size=cap, replace=False))
            keep.append(rows)
        keep = np.concatenate(keep)
        keep.sort()
        return X[keep], y[keep], np.ones(keep.size), keep
    if strategy == "class_weights":
        w_class = y.size / (classes.size * support.astype(np.float64))
        lookup = dict(zip(classes.tolist(), w_class))
        return X, y, np.array([lookup[int(c)] for c in y]), idx
    raise DataError(f"unknown balancing strategy {strategy!r}")


def train(X: np.ndarray, y: np.ndarray, feature_names, config: TrainConfig,
          weights: np.ndarray | None = None) -> ForestModel:
    """Train a forest; deterministic given (data, weights, config.seed)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError("X must be (n_rows, n_features) aligned with y")
    if X.shape[0] < 2:
        raise DataError("need at least 2 rows to train")
    classes = np.unique(y)
    if classes.size < 2:
        raise DataError("need at least 2 classes to train")
    if weights is None:
        weights = np.ones(y.size)
    y_idx = np.searchsorted(classes, y)
    d = X.shape[1]
    m = config.features_per_split or max(1, int(np.floor(np.sqrt(d))))

    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees, tree_importances = [], []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        rows = rng.integers(0, X.shape[0], X.shape[0]) if config.bootstrap \
            else np.arange(X.shape[0])
        builder = _TreeBuilder(X, y_idx, weights, classes.size, config, m, rng)
        builder.build(np.asarray(rows))
        trees.append(builder.finish())
        total = builder.importance.sum()
        if total > 0:
            tree_importances.append(builder.importance / total)

    degenerate = not tree_importances
    if degenerate:
        warnings.warn("no tree found a useful split (constant features?); "
                      "forest degenerates to class priors", stacklevel=2)
        importances = np.full(d, 1.0 / d)
    else:
        importances = np.mean(tree_importances, axis=0)
        importances = importances / importances.sum()
    return ForestModel(classes=classes, feature_names=tuple(feature_names),
                       trees=trees, importances=importances, config=config,
                       degenerate=degenerate)


def predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise DataError(f"feature schema mismatch: model expects "
                        f"{len(model.feature_names)} features, got {X.shape}")
    if X.shape[0] == 0:
        return np.zeros((0, model.classes.size))
    proba = np.zeros((X.shape[0], model.classes.size))
    for tree in model.trees:
        proba += tree.apply(X)
    return proba / len(model.trees)


def predict(model: ForestModel, X: np.ndarray, patch_ids=None) -> list[Prediction]:
    """Per-row argmax of the averaged leaf distributions; confidence is that
    maximum (the weighted fraction of tree votes)."""
    proba = predict_proba(model, X)
    if patch_ids is None:
        patch_ids = [str(i) for i in range(proba.shape[0])]
    best = np.argmax(proba, axis=1)
    return [Prediction(patch_id=pid,
                       class_label=int(model.classes[b]),
                       confidence=float(proba[i, b]))
            for i, (pid, b) in enumerate(zip(patch_ids, best))]


@dataclass
class EvalReport:
    classes: np.ndarray
    support: np.ndarray
    confusion: np.ndarray          # rows true, columns predicted
    precision: np.ndarray
    recall: np.ndarray
    importances: np.ndarray        # mean across folds
    feature_names: tuple
    fold_importances: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classes": self.classes.tolist(),
            "support": self.support.tolist(),
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "importances": dict(zip(self.feature_names,
                                    (float(v) for v in self.importances))),
        }


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per row; every class spread round-robin over seeded shuffles."""
    classes, support = np.unique(y, return_counts=True)
    for c, s in zip(classes, support):
        if s < folds:
            raise DataError(f"class {int(c)} has support {int(s)} < {folds} folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=np.int64)
    for c in classes:
        rows = np.nonzero(y == c)[0]
        rows = rng.permutation(rows)
        fold[rows] = np.arange(rows.size) % folds
    return fold


def kfold_eval(X: np.ndarray, y: np.ndarray, feature_names,
               config: TrainConfig) -> EvalReport:
    """Stratified K-fold evaluation; balancing is applied inside each
    training fold. Confusion rows are true classes, columns predictions."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    fold = stratified_folds(y, config.folds, config.seed)
    confusion = np.zeros((classes.size, classes.size), dtype=np.int64)
    fold_importances = []
    for f in range(config.folds):
        test = fold == f
        Xt, yt = X[~test], y[~test]
        Xb, yb, wb, _ = balance(Xt, yt, config.balancing, config.cap_ratio,
                                seed=config.seed + f)
        model = train(Xb, yb, feature_names, config, weights=wb)
        preds = predict(model, X[test])
        true_i = np.searchsorted(classes, y[test])
        pred_i = np.searchsorted(classes, [p.class_label for p in preds])
        np.add.at(confusion, (true_i, pred_i), 1)
        fold_importances.append(model.importances)

    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    actual = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
    importances = np.mean(fold_importances, axis=0)
    importances = importances / importances.sum()
    return EvalReport(classes=classes, support=actual.astype(np.int64),
                      confusion=confusion, precision=precision, recall=recall,
                      importances=importances, feature_names=tuple(feature_names),
                      fold_importances=fold_importances)


def per_point_metrics(report: EvalReport, mix_per_class: dict) -> dict:
    """Patch metrics scaled to point level: metric_point = metric_patch * mix."""
    out = {}
    for i, c in enumerate(report.classes):
        mix = mix_per_class.get(int(c))
        if mix is None:
            continue
        if not 0 < mix <= 1:
            raise DataError(f"mix for class {int(c)} must be in (0, 1], got {mix}")
        out[int(c)] = {
            "precision_point": float(report.precision[i] * mix),
            "recall_point": float(report.recall[i] * mix),
        }
    return out


# -- model persistence -------------------------------------------------------

def save_model(path, model: ForestModel) -> None:
    """Versioned little-endian binary with the feature schema embedded."""
    header = {
        "classes": model.classes.tolist(),
        "feature_names": list(model.feature_names),
        "config": asdict(model.config),
        "importances": model.importances.tolist(),
        "degenerate": model.degenerate,
        "n_trees": len(model.trees),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<HI", _MODEL_VERSION, len(blob)))
        fh.write(blob)
        for tree in model.trees:
            fh.write(struct.pack("<I", tree.feature.size))
            fh.write(tree.feature.astype("<i4").tobytes())
            fh.write(tree.threshold.astype("<f8").tobytes())
            fh.write(tree.left.astype("<i4").tobytes())
            fh.write(tree.right.astype("<i4").tobytes())
            fh.write(tree.dist.astype("<f8").tobytes())


def load_model(path) -> ForestModel:
    raw = open(path, "rb").read()
    if raw[:4] != _MODEL_MAGIC:
        raise DataError(f"{path}: not a pcdim model file")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != _MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    header = json.loads(raw[10:10 + hlen].decode("utf-8"))
    classes = np.array(header["classes"])
    k = classes.size
    at = 10 + hlen
    trees = []
    for _ in range(header["n_trees"]):
        (n,) = struct.unpack_from("<I", raw, at)
        at += 4
        feature = np.frombuffer(raw, dtype="<i4", count=n, offset=at).copy(); at += 4 * n
        threshold = np.frombuffer(raw, dtype="<f8", count=n, offset=at).copy(); at += 8 * n
        left = np.frombuffer(raw, dtype="<i4", count=n, offset=at).copy(); at += 4 * n
        right = np.frombuffer(raw, dtype="<i4", count=n, offset=at).copy(); at += 4 * n
        dist = np.frombuffer(raw, dtype="<f8", count=n * k, offset=at).reshape(n, k).copy()
        at += 8 * n * k
        trees.append(Tree(feature, threshold, left, right, dist))
    cfg = TrainConfig(**header["config"])
    return ForestModel(classes=classes, feature_names=tuple(header["feature_names"]),
                       trees=trees, importances=np.array(header["importances"]),
                       config=cfg, degenerate=header["degenerate"])
