"""Bounded random forest (Gini splits, bootstrap, depth cap) written for small models.

Trees are stored as flat preorder node arrays so they serialize directly into
the model container; see :func:`pack_forest`.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._parallel import ordered_map
from .errors import EmptyInput, FormatError, InvalidConfig, ShapeError

LEAF = -1
_SCORE_RTOL = 1e-12


@dataclass(eq=False)
class Tree:
    feature: np.ndarray  # int32, LEAF for leaves
    threshold: np.ndarray  # float32; go left when x <= threshold
    left: np.ndarray  # uint32
    right: np.ndarray  # uint32
    value: np.ndarray  # uint32 (n_nodes, n_classes) training class counts

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def n_leaves(self):
        return int(np.count_nonzero(self.feature == LEAF))

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        # preorder: parents always precede children
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            active = feat != LEAF
            if not active.any():
                return node
            r, n, f = rows[active], node[active], feat[active]
            go_left = X[r, f] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def leaf_distribution(self, X):
        counts = self.value[self.apply(X)].astype(np.float64)
        return counts / counts.sum(axis=1, keepdims=True)


def _f32_threshold(lo, hi):
    """Midpoint of (lo, hi) rounded to float32 without leaving [lo, hi)."""
    thr = np.float32((lo + hi) / 2.0)
    if thr >= hi:
        thr = np.nextafter(np.float32(hi), np.float32(-np.inf))
    if thr < lo:
        thr = np.float32(lo)
    return thr


def _best_split_on(col, y, n_classes, min_leaf):
    order = np.argsort(col, kind="stable")
    v = col[order]
    n = v.size
    left = np.cumsum(np.eye(n_classes, dtype=np.int64)[y[order]], axis=0)
    total = left[-1]
    # candidate cut i puts rows [0, i) on the left
    cuts = np.arange(min_leaf, n - min_leaf + 1)
    cuts = cuts[(cuts > 0) & (cuts < n)]
    cuts = cuts[v[cuts - 1] < v[cuts]]
    if cuts.size == 0:
        return None
    lc = left[cuts - 1]
    rc = total - lc
    score = (lc * lc).sum(axis=1) / cuts + (rc * rc).sum(axis=1) / (n - cuts)
    best = int(np.argmax(score))
    i = cuts[best]
    return float(score[best]), _f32_threshold(float(v[i - 1]), float(v[i]))


class _TreeBuilder:
    def __init__(self, XT, y, n_classes, max_depth, max_features, min_leaf, rng):
        self.XT = XT
        self.y = y
        self.n_classes = n_classes
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.rng = rng
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _split(self, idx):
        y = self.y[idx]
        found = []
        evaluated = 0
        for f in self.rng.permutation(self.XT.shape[0]):
            col = self.XT[f][idx]
            if col.min() == col.max():
                continue
            res = _best_split_on(col, y, self.n_classes, self.min_leaf)
            if res is not None:
                found.append((int(f), res[0], res[1]))
            evaluated += 1
            if evaluated >= self.max_features:
                break
        if not found:
            return None
        top = max(s for _, s, _ in found)
        tol = _SCORE_RTOL * max(top, 1.0)
        ties = [(f, thr) for f, s, thr in found if s >= top - tol]
        return min(ties, key=lambda ft: (ft[0], ft[1]))

    def grow(self, idx, depth):
        counts = np.bincount(self.y[idx], minlength=self.n_classes)
        node = len(self.feature)
        self.feature.append(LEAF)
        self.threshold.append(np.float32(0.0))
        self.left.append(0)
        self.right.append(0)
        self.value.append(counts)
        if (
            depth >= self.max_depth
            or counts.max() == idx.size
            or idx.size < 2 * self.min_leaf
        ):
            return node
        split = self._split(idx)
        if split is None:
            return node
        f, thr = split
        mask = self.XT[f][idx] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self.grow(idx[mask], depth + 1)
        self.right[node] = self.grow(idx[~mask], depth + 1)
        return node

    def tree(self):
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float32),
            left=np.asarray(self.left, dtype=np.uint32),
            right=np.asarray(self.right, dtype=np.uint32),
            value=np.asarray(self.value, dtype=np.uint32).reshape(-1, self.n_classes),
        )


def tree_rng(seed, index):
    """Independent RNG stream for tree ``index`` of a forest seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _resolve_max_features(max_features, n_features):
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if max_features is None:
        return n_features
    if isinstance(max_features, (int, np.integer)) and max_features >= 1:
        return min(int(max_features), n_features)
    raise InvalidConfig(f"max_features={max_features!r}")


class RandomForestClassifier(ClassifierMixin, BaseEstimator):
    """Random forest with a hard cap on tree count and depth.

    Each tree sees a bootstrap resample and picks, at every node, the best
    Gini split over a random subset of ``max_features`` non-constant
    features. Equal-score candidates resolve to the lowest feature index and
    then the lowest threshold. Tree ``i`` draws from its own stream derived
    from ``(random_state, i)``, so the fitted forest does not depend on how
    many worker threads built it.
    """

    def __init__(self, n_estimators=51, max_depth=15, max_features="sqrt",
                 min_samples_leaf=1, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state

    def _check_params(self):
        if self.n_estimators < 1:
            raise InvalidConfig("n_estimators must be >= 1")
        if self.max_depth < 0:
            raise InvalidConfig("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise InvalidConfig("min_samples_leaf must be >= 1")
        seed = 0 if self.random_state is None else self.random_state
        if not isinstance(seed, (int, np.integer)) or not 0 <= seed < 2**64:
            raise InvalidConfig("random_state must be an unsigned 64-bit integer")
        return int(seed)

    def fit(self, X, y):
        seed = self._check_params()
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2:
            raise ShapeError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] == 0 or X.shape[1] == 0:
            raise EmptyInput("no training data")
        if y.shape != (X.shape[0],):
            raise ShapeError(f"{X.shape[0]} rows but {y.size} labels")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        n_classes = self.classes_.size
        m = _resolve_max_features(self.max_features, self.n_features_in_)
        XT = np.ascontiguousarray(X.T)
        y_enc = y_enc.astype(np.int64)
        n = X.shape[0]

        def build(i):
            rng = tree_rng(seed, i)
            idx = np.sort(rng.integers(0, n, n))
            builder = _TreeBuilder(XT, y_enc, n_classes, self.max_depth, m,
                                   self.min_samples_leaf, rng)
            builder.grow(idx, 0)
            return builder.tree()

        self.trees_ = ordered_map(build, range(self.n_estimators))
        return self

    @property
    def n_classes_(self):
        return self.classes_.size

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ShapeError(
                f"expected {self.n_features_in_} features, got shape {X.shape}"
            )
        return X

    def predict_proba(self, X):
        """Mean of the per-tree leaf class distributions."""
        X = self._check_X(X)
        proba = np.zeros((X.shape[0], self.n_classes_))
        for tree in self.trees_:
            proba += tree.leaf_distribution(X)
        return proba / len(self.trees_)

    def predict(self, X):
        # np.argmax returns the first maximum, i.e. the smallest class id on ties
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def tree_stats(self):
        check_is_fitted(self, "trees_")
        return {
            "n_estimators": len(self.trees_),
            "max_depth_observed": max(t.depth() for t in self.trees_),
            "total_nodes": sum(t.n_nodes for t in self.trees_),
            "total_leaves": sum(t.n_leaves for t in self.trees_),
        }


# -- serialization -----------------------------------------------------------

_FOREST_HEADER = struct.Struct("<III")


def _node_dtype(n_classes):
    return np.dtype([
        ("feature", "<i4"),
        ("threshold", "<f4"),
        ("left", "<u4"),
        ("right", "<u4"),
        ("value", "<u4", (n_classes,)),
    ])


def pack_forest(trees, n_classes, n_features):
    """Trees as flat little-endian node arrays, each prefixed by its node count."""
    dt = _node_dtype(n_classes)
    parts = [_FOREST_HEADER.pack(len(trees), n_classes, n_features)]
    for t in trees:
        rec = np.empty(t.n_nodes, dtype=dt)
        rec["feature"] = t.feature
        rec["threshold"] = t.threshold
        rec["left"] = t.left
        rec["right"] = t.right
        rec["value"] = t.value
        parts.append(struct.pack("<I", t.n_nodes))
        parts.append(rec.tobytes())
    return b"".join(parts)


def unpack_forest(blob):
    """Inverse of :func:`pack_forest`: ``(trees, n_classes, n_features)``."""
    try:
        n_trees, n_classes, n_features = _FOREST_HEADER.unpack_from(blob, 0)
        dt = _node_dtype(n_classes)
        pos = _FOREST_HEADER.size
        trees = []
        for _ in range(n_trees):
            (n_nodes,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            end = pos + n_nodes * dt.itemsize
            if end > len(blob):
                raise FormatError("truncated forest payload")
            rec = np.frombuffer(blob[pos:end], dtype=dt)
            pos = end
            trees.append(Tree(
                feature=rec["feature"].astype(np.int32),
                threshold=rec["threshold"].astype(np.float32),
                left=rec["left"].astype(np.uint32),
                right=rec["right"].astype(np.uint32),
                value=rec["value"].astype(np.uint32).reshape(n_nodes, n_classes),
            ))
    except struct.error as exc:
        raise FormatError(f"truncated forest payload: {exc}") from None
    if pos != len(blob):
        raise FormatError("trailing bytes after forest payload")
    for t in trees:
        internal = np.flatnonzero(t.feature != LEAF)
        # children must come after their parent (preorder), which also rules out cycles
        if (
            np.any(t.feature[internal] >= n_features)
            or np.any(t.left[internal] <= internal)
            or np.any(t.right[internal] <= internal)
            or np.any(t.left[internal] >= t.n_nodes)
            or np.any(t.right[internal] >= t.n_nodes)
        ):
            raise FormatError("forest node references out of range")
    return trees, n_classes, n_features
