"""Decoupled classifiers over frozen embeddings.

The primary classifier is a random forest whose per-tree training subsets are
class-balanced bootstraps of size n_min (the smallest class count), grown as
plain Gini CART trees with per-node feature subsampling.  Everything is
deterministic given the seed, ties break toward the smallest class id, and
forests round-trip through versioned JSON bit-exactly.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DomainError, StateError

FOREST_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# CART


def _gini(counts):
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return 1.0 - float((p * p).sum())


def _best_split_for_feature(values, label_idx, n_classes):
    """Best (threshold, weighted-gini) along one feature, or None."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    y = label_idx[order]
    n = len(v)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    prefix = np.cumsum(onehot, axis=0)  # class counts among first i+1 points
    total = prefix[-1]

    boundaries = np.nonzero(v[1:] > v[:-1])[0]  # split after position b
    if len(boundaries) == 0:
        return None
    best = None
    for b in boundaries:
        left = prefix[b]
        right = total - left
        n_left = b + 1
        n_right = n - n_left
        score = (n_left * _gini(left) + n_right * _gini(right)) / n
        if best is None or score < best[1] - 1e-15:
            best = ((v[b] + v[b + 1]) / 2.0, score)
    return best


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode" = None
    right: "TreeNode" = None
    histogram: dict = None  # class id -> count (leaves only)

    @property
    def is_leaf(self):
        return self.left is None

    def depth(self):
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self):
        if self.is_leaf:
            return {"type": "leaf", "histogram": {str(k): int(v) for k, v in sorted(self.histogram.items())}}
        return {
            "type": "split",
            "feature": int(self.feature),
            "threshold": float(self.threshold),
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        if d["type"] == "leaf":
            return cls(histogram={int(k): v for k, v in d["histogram"].items()})
        return cls(
            feature=d["feature"],
            threshold=d["threshold"],
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


def cart_fit(features, labels, mtry, rng, min_samples_split=2):
    """Greedy Gini tree; at each node `mtry` candidate features are drawn
    uniformly without replacement.  Grown until pure or too small."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if len(features) == 0:
        raise DomainError("cannot fit a tree on an empty subset")
    classes = np.unique(labels)
    class_pos = {c: i for i, c in enumerate(classes)}
    label_idx = np.array([class_pos[l] for l in labels])
    n_features = features.shape[1]
    mtry = max(1, min(mtry, n_features))

    def leaf(idx):
        counts = np.bincount(label_idx[idx], minlength=len(classes))
        return TreeNode(histogram={int(c): int(n) for c, n in zip(classes, counts) if n > 0})

    def grow(idx):
        node_labels = label_idx[idx]
        if len(idx) < min_samples_split or len(np.unique(node_labels)) == 1:
            return leaf(idx)
        candidates = np.sort(rng.choice(n_features, size=mtry, replace=False))
        best = None  # (score, feature, threshold)
        for f in candidates:
            found = _best_split_for_feature(features[idx, f], node_labels, len(classes))
            if found is None:
                continue
            threshold, score = found
            if best is None or score < best[0] - 1e-15:
                best = (score, int(f), threshold)
        if best is None:
            return leaf(idx)
        _, f, threshold = best
        mask = features[idx, f] <= threshold
        return TreeNode(feature=f, threshold=threshold, left=grow(idx[mask]), right=grow(idx[~mask]))

    return grow(np.arange(len(features)))


def _leaf_label(histogram):
    best_class, best_count = None, -1
    for c in sorted(histogram):
        if histogram[c] > best_count:
            best_class, best_count = c, histogram[c]
    return best_class


def _flatten(root):
    """Array form of a tree for vectorized prediction."""
    feat, thresh, left, right, label = [], [], [], [], []

    def visit(node):
        i = len(feat)
        feat.append(node.feature)
        thresh.append(node.threshold)
        left.append(-1)
        right.append(-1)
        label.append(_leaf_label(node.histogram) if node.is_leaf else -1)
        if not node.is_leaf:
            left[i] = visit(node.left)
            right[i] = visit(node.right)
        return i

    visit(root)
    return (
        np.asarray(feat),
        np.asarray(thresh),
        np.asarray(left),
        np.asarray(right),
        np.asarray(label),
    )


def tree_predict(root, features):
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    feat, thresh, left, right, label = _flatten(root)
    pos = np.zeros(len(features), dtype=np.int64)
    while True:
        at_leaf = left[pos] < 0
        if at_leaf.all():
            break
        active = ~at_leaf
        p = pos[active]
        go_left = features[active, feat[p]] <= thresh[p]
        pos[active] = np.where(go_left, left[p], right[p])
    return label[pos]


# ---------------------------------------------------------------------------
# Balanced forest


def balanced_subset(labels, rng):
    """Indices of a class-balanced bootstrap: n_min draws (with replacement)
    from every class, n_min being the smallest class count."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DomainError("empty training set")
    classes, counts = np.unique(labels, return_counts=True)
    n_min = int(counts.min())
    picks = []
    for c in classes:
        pool = np.nonzero(labels == c)[0]
        picks.append(rng.choice(pool, size=n_min, replace=True))
    return np.concatenate(picks)


@dataclass
class ForestModel:
    n_trees: int
    mtry: int
    seed: int
    classes: list = field(default_factory=list)
    trees: list = field(default_factory=list)  # TreeNode roots

    @property
    def fitted(self):
        return len(self.trees) > 0


def brf_fit(features, labels, n_trees=100, mtry=None, seed=0):
    """Forest of Gini trees, each trained on its own balanced bootstrap with
    an independent seed stream."""
    if n_trees < 1:
        raise DomainError(f"n_trees must be >= 1, got {n_trees}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if mtry is None:
        mtry = max(1, int(np.sqrt(features.shape[1])))
    model = ForestModel(n_trees=n_trees, mtry=mtry, seed=seed, classes=sorted(int(c) for c in np.unique(labels)))
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        subset = balanced_subset(labels, rng)
        model.trees.append(cart_fit(features[subset], labels[subset], mtry, rng))
    return model


def brf_predict(model, features):
    """Majority vote over trees; ties go to the smallest class id."""
    if not model.fitted:
        raise StateError("forest is not fitted")
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    features = np.atleast_2d(features)
    votes = np.stack([tree_predict(root, features) for root in model.trees])  # (trees, n)
    n_ids = max(model.classes) + 1
    counts = np.apply_along_axis(lambda v: np.bincount(v, minlength=n_ids), 0, votes)
    pred = counts.argmax(axis=0)
    return int(pred[0]) if single else pred


def forest_to_json(model):
    return json.dumps(
        {
            "version": FOREST_FORMAT_VERSION,
            "n_trees": model.n_trees,
            "mtry": model.mtry,
            "seed": model.seed,
            "classes": model.classes,
            "trees": [t.to_dict() for t in model.trees],
        },
        sort_keys=True,
    )


def forest_from_json(text):
    d = json.loads(text)
    if d["version"] != FOREST_FORMAT_VERSION:
        raise DomainError(f"unsupported forest format version {d['version']}")
    return ForestModel(
        n_trees=d["n_trees"],
        mtry=d["mtry"],
        seed=d["seed"],
        classes=d["classes"],
        trees=[TreeNode.from_dict(t) for t in d["trees"]],
    )


# ---------------------------------------------------------------------------
# Baselines


def knn_neighbors(avg_per_class):
    return max(1, int(avg_per_class // 2))


def knn_baseline(train_embeddings, labels, query, avg_per_class):
    """Majority label among the K nearest training points (Euclidean),
    K = max(1, floor(avg_per_class / 2)); vote ties to the smallest class id."""
    train = np.asarray(train_embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if len(train) == 0:
        raise StateError("empty training set")
    k = min(knn_neighbors(avg_per_class), len(train))
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    query = np.atleast_2d(query)
    dists = np.sqrt(np.square(query[:, None, :] - train[None, :, :]).sum(axis=2))
    nearest = np.argsort(dists, axis=1, kind="stable")[:, :k]
    n_ids = int(labels.max()) + 1
    preds = np.array([np.bincount(labels[row], minlength=n_ids).argmax() for row in nearest])
    return int(preds[0]) if single else preds


class LinearHeadClassifier:
    """Single linear layer + softmax trained with cross-entropy on frozen
    embeddings; the fully-connected comparison point."""

    def __init__(self, dim, classes, seed=0):
        self.classes = sorted(int(c) for c in classes)
        gen = torch.Generator().manual_seed(seed)
        bound = 1.0 / dim**0.5
        self.weight = torch.empty(len(self.classes), dim, dtype=torch.float64).uniform_(-bound, bound, generator=gen)
        self.bias = torch.zeros(len(self.classes), dtype=torch.float64)
        self.weight.requires_grad_(True)
        self.bias.requires_grad_(True)

    def logits(self, embeddings):
        x = torch.as_tensor(np.asarray(embeddings), dtype=torch.float64)
        return F.linear(x, self.weight, self.bias)

    def fit(self, embeddings, labels, epochs=200, lr=0.05):
        target = torch.tensor([self.classes.index(int(l)) for l in labels], dtype=torch.long)
        opt = torch.optim.Adam([self.weight, self.bias], lr=lr)
        for _ in range(epochs):
            opt.zero_grad()
            loss = F.cross_entropy(self.logits(embeddings), target)
            loss.backward()
            opt.step()
        return self

    def predict(self, embeddings):
        with torch.no_grad():
            idx = self.logits(embeddings).argmax(dim=1).numpy()
        return np.array([self.classes[i] for i in idx])


def linear_head_baseline(train_embeddings, labels, seed=0, epochs=200, lr=0.05):
    dim = np.asarray(train_embeddings).shape[1]
    return LinearHeadClassifier(dim, np.unique(labels), seed=seed).fit(train_embeddings, labels, epochs=epochs, lr=lr)
