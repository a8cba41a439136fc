"""Reference target model: bagged CART trees built from scratch.

Classification trees split on Gini impurity, regression trees on variance
reduction. Each node searches a random feature subset (sqrt(d) for
classification, d/3 for regression); the forest aggregates by majority
vote or mean. Deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"


class ForestError(ValueError):
    pass


@dataclass
class ForestConfig:
    task: str = CLASSIFICATION
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    bootstrap: bool = True
    feature_subset: str = "auto"   # "auto" | "all"
    seed: int = 0


@dataclass
class CartNode:
    value: float               # majority class or mean at this node
    proba: float = 0.0         # class-1 fraction (classification)
    feature: int | None = None
    threshold: float | None = None
    left: int | None = None
    right: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class CartTree:
    task: str
    nodes: list[CartNode] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._route(X, proba=False)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self._route(X, proba=True)

    def _route(self, X: np.ndarray, proba: bool) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        idx = np.arange(X.shape[0])
        stack = [(0, idx)]
        while stack:
            nid, rows = stack.pop()
            node = self.nodes[nid]
            if node.is_leaf:
                out[rows] = node.proba if proba else node.value
                continue
            mask = X[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[mask]))
            stack.append((node.right, rows[~mask]))
        return out

    def path_features(self, x: np.ndarray) -> list[int]:
        """Feature indices tested on x's root-to-leaf path, in order."""
        feats = []
        node = self.nodes[0]
        while not node.is_leaf:
            feats.append(node.feature)
            node = self.nodes[node.left if x[node.feature] <= node.threshold
                              else node.right]
        return feats


def _gini_split_score(y_sorted: np.ndarray):
    """Weighted child Gini for every prefix split of sorted labels.

    Returns an array scored at split position i (left = first i+1 rows).
    Lower is better.
    """
    n = y_sorted.size
    ones_left = np.cumsum(y_sorted)[:-1]
    n_left = np.arange(1, n)
    n_right = n - n_left
    ones_right = y_sorted.sum() - ones_left
    p1l = ones_left / n_left
    p1r = ones_right / n_right
    gini_l = 1.0 - p1l ** 2 - (1 - p1l) ** 2
    gini_r = 1.0 - p1r ** 2 - (1 - p1r) ** 2
    return (n_left * gini_l + n_right * gini_r) / n


def _var_split_score(y_sorted: np.ndarray):
    """Summed child variance*size for every prefix split (lower is better)."""
    n = y_sorted.size
    csum = np.cumsum(y_sorted)[:-1]
    csq = np.cumsum(y_sorted ** 2)[:-1]
    n_left = np.arange(1, n)
    total, total_sq = y_sorted.sum(), (y_sorted ** 2).sum()
    sse_l = csq - csum ** 2 / n_left
    n_right = n - n_left
    sse_r = (total_sq - csq) - (total - csum) ** 2 / n_right
    return (sse_l + sse_r) / n


def _fit_cart(X, y, cfg: ForestConfig, rng: np.random.Generator) -> CartTree:
    n, d = X.shape
    if cfg.feature_subset == "all":
        n_feats = d
    elif cfg.task == CLASSIFICATION:
        n_feats = int(np.ceil(np.sqrt(d)))
    else:
        n_feats = max(1, int(np.ceil(d / 3)))
    tree = CartTree(cfg.task)

    def leaf_value(yn):
        if cfg.task == CLASSIFICATION:
            p1 = float(yn.mean())
            return (1.0 if p1 >= 0.5 else 0.0), p1
        return float(yn.mean()), float(yn.mean())

    def impurity(yn):
        if cfg.task == CLASSIFICATION:
            p1 = yn.mean()
            return 1.0 - p1 ** 2 - (1 - p1) ** 2
        return float(yn.var())

    def grow(rows, depth):
        yn = y[rows]
        value, proba = leaf_value(yn)
        node = CartNode(value, proba)
        nid = len(tree.nodes)
        tree.nodes.append(node)
        if (cfg.max_depth is not None and depth >= cfg.max_depth) \
                or rows.size < 2 * cfg.min_leaf or impurity(yn) == 0.0:
            return nid
        feats = rng.choice(d, size=n_feats, replace=False) if n_feats < d \
            else np.arange(d)
        best = None  # (score, feature, threshold)
        for f in np.sort(feats):
            xv = X[rows, f]
            order = np.argsort(xv, kind="stable")
            xs, ys = xv[order], yn[order]
            scores = _gini_split_score(ys) if cfg.task == CLASSIFICATION \
                else _var_split_score(ys)
            valid = xs[:-1] != xs[1:]
            k = np.arange(1, rows.size)
            valid &= (k >= cfg.min_leaf) & (rows.size - k >= cfg.min_leaf)
            if not valid.any():
                continue
            scores = np.where(valid, scores, np.inf)
            i = int(np.argmin(scores))
            if best is None or scores[i] < best[0]:
                best = (float(scores[i]), int(f), float((xs[i] + xs[i + 1]) / 2))
        if best is None or best[0] >= impurity(yn) - 1e-15:
            return nid
        _, f, t = best
        mask = X[rows, f] <= t
        node.feature, node.threshold = f, t
        node.left = grow(rows[mask], depth + 1)
        node.right = grow(rows[~mask], depth + 1)
        return nid

    grow(np.arange(n), 0)
    return tree


@dataclass
class ReferenceForest:
    config: ForestConfig
    trees: list[CartTree] = field(default_factory=list)

    @property
    def task(self) -> str:
        return self.config.task

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.config.task == CLASSIFICATION:
            return (self.predict_proba(X) >= 0.5).astype(float)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting class 1."""
        X = np.asarray(X, dtype=float)
        votes = np.mean([t.predict(X) for t in self.trees], axis=0)
        return votes


def fit_reference_forest(X: np.ndarray, y: np.ndarray,
                         config: ForestConfig | None = None) -> ReferenceForest:
    """Bootstrap-bagged CART trees over a plain numeric feature matrix."""
    cfg = config or ForestConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ForestError("bad training matrix")
    if cfg.task == CLASSIFICATION and np.unique(y).size < 2:
        raise ForestError("classification needs at least 2 classes")
    rng = np.random.default_rng(cfg.seed)
    forest = ReferenceForest(cfg)
    n = X.shape[0]
    for _ in range(cfg.n_trees):
        rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        forest.trees.append(_fit_cart(X[rows], y[rows], cfg, rng))
    return forest
