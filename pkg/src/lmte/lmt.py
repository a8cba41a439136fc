"""Linear model trees: axis-aligned splits chosen to minimize leaf-model loss.

Leaves hold ridge regressions (regression task) or L2-regularized logistic
regressions (binary classification). Split search refits both child leaf
models for every candidate threshold; greedy mode tries every midpoint
between consecutive distinct feature values, adaptive mode probes a fixed
number of quantile-placed candidates per feature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .tabular import CATEGORICAL, Schema, onehot_encoder

RIDGE = "ridge"
LOGISTIC = "logistic"

REGRESSION = "regression"
CLASSIFICATION = "classification"

# Relative improvement a split must reach before it is accepted.
SPLIT_REL_TOL = 1e-7

_PROB_CLIP = 1e-6


class LmtError(ValueError):
    pass


@dataclass(frozen=True)
class LeafModel:
    """Linear or logistic model over the encoded feature space."""

    kind: str                 # "ridge" | "logistic"
    weights: np.ndarray
    intercept: float
    loss: float               # training loss: SSE (ridge) or row-weighted penalized NLL

    def raw(self, X: np.ndarray) -> np.ndarray:
        """Pre-link output w.x + b (the logit for logistic leaves)."""
        return X @ self.weights + self.intercept

    def predict(self, X: np.ndarray) -> np.ndarray:
        z = self.raw(X)
        if self.kind == LOGISTIC:
            return _sigmoid(z)
        return z


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    total_loss: float
    left_model: LeafModel
    right_model: LeafModel


@dataclass
class LmtConfig:
    """Tree fitting configuration; None fields resolve to task defaults."""

    task: str
    max_depth: int | None = None       # classification 4, regression 2
    min_leaf: int | None = None        # max(20, encoded width + 1)
    search: str = "adaptive"           # "greedy" | "adaptive"
    n_candidates: int = 50
    ridge_reg: float = 1e-3
    logistic_reg: float = 1.0
    seed: int = 0

    def resolved(self, n_features: int) -> "LmtConfig":
        cfg = replace(self)
        if cfg.max_depth is None:
            cfg.max_depth = 4 if cfg.task == CLASSIFICATION else 2
        if cfg.min_leaf is None:
            cfg.min_leaf = max(20, n_features + 1)
        if cfg.task not in (REGRESSION, CLASSIFICATION):
            raise LmtError(f"unknown task {cfg.task!r}")
        if cfg.search not in ("greedy", "adaptive"):
            raise LmtError(f"unknown search mode {cfg.search!r}")
        return cfg


@dataclass
class TreeNode:
    node_id: int
    depth: int
    n_rows: int
    model: LeafModel
    feature_index: int | None = None
    threshold: float | None = None
    left: int | None = None
    right: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class LinearModelTree:
    task: str
    nodes: list[TreeNode]
    config: LmtConfig
    feature_names: list[str]
    schema_fingerprint: str = ""

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def leaf_for(self, x: np.ndarray) -> TreeNode:
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if x[node.feature_index] <= node.threshold
                              else node.right]
        return node

    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def total_leaf_loss(self) -> float:
        return sum(n.model.loss for n in self.nodes if n.is_leaf)


@dataclass(frozen=True)
class Condition:
    """One atomic test of a context rule, in original feature terms."""

    feature: str
    op: str      # "<=", ">", "==", "!="
    value: float | str

    def holds(self, cell) -> bool:
        if self.op == "<=":
            return cell <= self.value
        if self.op == ">":
            return cell > self.value
        if self.op == "==":
            return cell == self.value
        return cell != self.value

    def render(self) -> str:
        v = self.value if isinstance(self.value, str) else format(self.value, "g")
        return f"{self.feature} {self.op} {v}"


@dataclass(frozen=True)
class RuleConjunction:
    conditions: tuple[Condition, ...]
    leaf_id: int

    def satisfied_by(self, schema: Schema, row: np.ndarray) -> bool:
        for cond in self.conditions:
            j = schema.column_index(cond.feature)
            col = schema.columns[j]
            cell = col.categories[int(row[j])] if col.kind == CATEGORICAL else row[j]
            if not cond.holds(cell):
                return False
        return True

    def render(self) -> str:
        if not self.conditions:
            return "(always)"
        return " AND ".join(c.render() for c in self.conditions)

    def to_dicts(self) -> list[dict]:
        return [{"feature": c.feature, "op": c.op, "value": c.value}
                for c in self.conditions]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Leaf models
# ---------------------------------------------------------------------------

def fit_ridge(X: np.ndarray, y: np.ndarray, reg: float = 1e-3,
              sample_weight: np.ndarray | None = None) -> LeafModel:
    """Ridge regression via the normal equations; the intercept is unpenalized.

    A singular system at reg=0 is retried with reg bumped to 1e-8 rather
    than raised.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LmtError("X/y shape mismatch")
    if reg < 0:
        raise LmtError("reg must be >= 0")
    n, d = X.shape
    A = np.column_stack([X, np.ones(n)])
    if sample_weight is not None:
        sw = np.asarray(sample_weight, dtype=float)
        Aw = A * sw[:, None]
        G = A.T @ Aw
        b = Aw.T @ y
    else:
        G = A.T @ A
        b = A.T @ y
    penalty = np.zeros(d + 1)
    penalty[:d] = reg
    theta = _solve_regularized(G, b, penalty)
    resid = A @ theta - y
    if sample_weight is not None:
        sse = float(np.sum(sample_weight * resid ** 2))
    else:
        sse = float(resid @ resid)
    return LeafModel(RIDGE, theta[:d], float(theta[d]), sse)


def _solve_regularized(G, b, penalty):
    try:
        return np.linalg.solve(G + np.diag(penalty), b)
    except np.linalg.LinAlgError:
        bumped = np.maximum(penalty, 1e-8)
        return np.linalg.solve(G + np.diag(bumped), b)


def fit_logistic(X: np.ndarray, y: np.ndarray, reg: float = 1.0,
                 sample_weight: np.ndarray | None = None,
                 warm_start: LeafModel | None = None) -> LeafModel:
    """L2 logistic regression by damped Newton (IRLS).

    Minimizes mean NLL + reg * ||w||^2 / 2 (intercept unpenalized) to a
    gradient norm of 1e-6 or 100 iterations. One-class input yields a
    constant-probability leaf with the probability clipped away from 0/1.
    The recorded loss is the objective scaled by the row count so split
    scores from differently sized children are comparable.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if sample_weight is None:
        sw = np.ones(n)
    else:
        sw = np.asarray(sample_weight, dtype=float)
    wsum = float(sw.sum())

    ymin, ymax = y.min(), y.max()
    if ymin == ymax:
        p = min(max(float(ymin), _PROB_CLIP), 1.0 - _PROB_CLIP)
        intercept = float(np.log(p / (1 - p)))
        nll = -float(np.log(p if ymin == 1.0 else 1 - p))
        return LeafModel(LOGISTIC, np.zeros(d), intercept, wsum * nll)

    theta = np.zeros(d + 1)
    if warm_start is not None and warm_start.kind == LOGISTIC \
            and warm_start.weights.shape == (d,):
        theta[:d] = warm_start.weights
        theta[d] = warm_start.intercept

    A = np.column_stack([X, np.ones(n)])
    penalty = np.zeros(d + 1)
    penalty[:d] = reg

    def objective(th):
        z = A @ th
        # stable mean weighted NLL: log(1 + e^-|z|) + max(z,0) - y*z
        nll = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - y * z
        return float((sw @ nll) / wsum + 0.5 * reg * th[:d] @ th[:d])

    obj = objective(theta)
    for _ in range(100):
        z = A @ theta
        p = _sigmoid(z)
        grad = A.T @ (sw * (p - y)) / wsum + penalty * theta
        if np.linalg.norm(grad) <= 1e-6:
            break
        s = np.maximum(sw * p * (1 - p), 1e-12)
        H = (A * s[:, None]).T @ A / wsum + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        for _ in range(30):
            cand = theta - t * step
            cand_obj = objective(cand)
            if cand_obj <= obj:
                theta, obj = cand, cand_obj
                break
            t *= 0.5
        else:
            break
    return LeafModel(LOGISTIC, theta[:d], float(theta[d]), wsum * obj)


def _fit_leaf(X, y, config: LmtConfig, warm_start=None) -> LeafModel:
    if config.task == CLASSIFICATION:
        return fit_logistic(X, y, config.logistic_reg, warm_start=warm_start)
    return fit_ridge(X, y, config.ridge_reg)


# ---------------------------------------------------------------------------
# Split search
# ---------------------------------------------------------------------------

def _candidate_thresholds(x: np.ndarray, search: str, n_candidates: int) -> np.ndarray:
    """Candidate thresholds for one feature at one node.

    Greedy: every midpoint between consecutive distinct sorted values.
    Adaptive: quantile probes snapped onto the greedy midpoint grid, so the
    adaptive set is always a subset of the greedy set (and equals it when
    n_candidates covers every midpoint).
    """
    distinct = np.unique(x)
    if distinct.size < 2:
        return np.empty(0)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    if search == "greedy" or mids.size <= n_candidates:
        return mids
    probes = np.quantile(x, (np.arange(n_candidates) + 1) / (n_candidates + 1))
    snapped = np.searchsorted(distinct, probes, side="right") - 1
    snapped = np.clip(snapped, 0, mids.size - 1)
    return np.unique(mids[snapped])


def best_split(X: np.ndarray, y: np.ndarray, config: LmtConfig,
               parent: LeafModel | None = None) -> SplitCandidate | None:
    """The loss-minimizing split of this node, or None when nothing improves.

    Ties are broken by (lower feature index, lower threshold). A split is
    accepted only when the summed child loss improves the unsplit leaf loss
    by more than SPLIT_REL_TOL relative.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if parent is None:
        parent = _fit_leaf(X, y, config)
    best: SplitCandidate | None = None
    for j in range(d):
        xj = X[:, j]
        for t in _candidate_thresholds(xj, config.search, config.n_candidates):
            mask = xj <= t
            n_left = int(mask.sum())
            if n_left < config.min_leaf or n - n_left < config.min_leaf:
                continue
            lm = _fit_leaf(X[mask], y[mask], config, warm_start=parent)
            rm = _fit_leaf(X[~mask], y[~mask], config, warm_start=parent)
            total = lm.loss + rm.loss
            if not np.isfinite(total):
                continue
            if best is None or total < best.total_loss:
                best = SplitCandidate(j, float(t), total, lm, rm)
    if best is None:
        return None
    if parent.loss - best.total_loss <= SPLIT_REL_TOL * abs(parent.loss):
        return None
    return best


def fit_lmt(X: np.ndarray, y: np.ndarray, config: LmtConfig,
            feature_names: list[str] | None = None,
            schema_fingerprint: str = "") -> LinearModelTree:
    """Fit a linear model tree by recursive loss-minimizing splitting."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise LmtError("empty input")
    cfg = config.resolved(X.shape[1])
    if X.shape[0] < cfg.min_leaf:
        raise LmtError(f"{X.shape[0]} rows < min_leaf {cfg.min_leaf}")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(X.shape[1])]
    nodes: list[TreeNode] = []

    def grow(Xn, yn, depth, model=None):
        if model is None:
            model = _fit_leaf(Xn, yn, cfg)
        node = TreeNode(len(nodes), depth, Xn.shape[0], model)
        nodes.append(node)
        if depth >= cfg.max_depth or Xn.shape[0] < 2 * cfg.min_leaf:
            return node.node_id
        cand = best_split(Xn, yn, cfg, parent=model)
        if cand is None:
            return node.node_id
        mask = Xn[:, cand.feature_index] <= cand.threshold
        node.feature_index = cand.feature_index
        node.threshold = cand.threshold
        node.left = grow(Xn[mask], yn[mask], depth + 1, cand.left_model)
        node.right = grow(Xn[~mask], yn[~mask], depth + 1, cand.right_model)
        return node.node_id

    grow(X, y, 0)
    return LinearModelTree(cfg.task, nodes, cfg, list(feature_names), schema_fingerprint)


# ---------------------------------------------------------------------------
# Prediction and decision paths
# ---------------------------------------------------------------------------

def predict(tree: LinearModelTree, X: np.ndarray) -> np.ndarray:
    """Leaf-model outputs for each row (probabilities for classification).

    A value exactly at a threshold routes left (the <= convention).
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != tree.n_features:
        raise LmtError(f"point width {X.shape[1]} != tree width {tree.n_features}")
    out = np.empty(X.shape[0])
    idx = np.arange(X.shape[0])
    stack = [(0, idx)]
    while stack:
        nid, rows = stack.pop()
        node = tree.nodes[nid]
        if node.is_leaf:
            out[rows] = node.model.predict(X[rows])
            continue
        mask = X[rows, node.feature_index] <= node.threshold
        stack.append((node.left, rows[mask]))
        stack.append((node.right, rows[~mask]))
    return out[0] if single else out


def predict_label(tree: LinearModelTree, X: np.ndarray) -> np.ndarray:
    """Hard labels for classification trees (probability >= 0.5 -> 1)."""
    return (predict(tree, X) >= 0.5).astype(float)


def decision_path(tree: LinearModelTree, x: np.ndarray, schema: Schema) -> RuleConjunction:
    """The conjunction of split conditions on x's root-to-leaf path.

    Conditions are rendered on original features: one-hot columns become
    ==/!= tests on the category, and repeated tests of one numerical
    feature are merged into a single interval.
    """
    x = np.asarray(x, dtype=float)
    layout = onehot_encoder(schema)
    raw: list[tuple[int, bool, float]] = []
    node = tree.nodes[0]
    while not node.is_leaf:
        went_left = x[node.feature_index] <= node.threshold
        raw.append((node.feature_index, went_left, node.threshold))
        node = tree.nodes[node.left if went_left else node.right]

    # Gather per-original-feature bounds / category facts in path order.
    order: list[str] = []
    num_bounds: dict[str, list] = {}
    cat_facts: dict[str, dict] = {}
    for j, went_left, t in raw:
        ci, category = layout.encoded_column_of(j)
        name = schema.columns[ci].name
        if category is None:
            if name not in num_bounds:
                num_bounds[name] = [None, None]  # (lower from ">", upper from "<=")
                order.append(name)
            lo, hi = num_bounds[name]
            if went_left:
                num_bounds[name][1] = t if hi is None else min(hi, t)
            else:
                num_bounds[name][0] = t if lo is None else max(lo, t)
        else:
            if name not in cat_facts:
                cat_facts[name] = {"eq": None, "ne": []}
                order.append(name)
            if went_left:  # one-hot slot <= 0.5: the category is NOT `category`
                if category not in cat_facts[name]["ne"]:
                    cat_facts[name]["ne"].append(category)
            else:
                cat_facts[name]["eq"] = category

    conditions: list[Condition] = []
    for name in order:
        if name in num_bounds:
            lo, hi = num_bounds[name]
            if lo is not None:
                conditions.append(Condition(name, ">", float(lo)))
            if hi is not None:
                conditions.append(Condition(name, "<=", float(hi)))
        else:
            facts = cat_facts[name]
            if facts["eq"] is not None:
                conditions.append(Condition(name, "==", facts["eq"]))
            else:
                conditions.extend(Condition(name, "!=", c) for c in facts["ne"])
    return RuleConjunction(tuple(conditions), node.node_id)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

TREE_FORMAT = "lmte-tree/1"


def tree_to_dict(tree: LinearModelTree) -> dict:
    nodes = []
    for n in tree.nodes:
        rec = {
            "id": n.node_id,
            "depth": n.depth,
            "n_rows": n.n_rows,
            "model": {
                "kind": n.model.kind,
                "weights": [float(w) for w in n.model.weights],
                "intercept": n.model.intercept,
                "loss": n.model.loss,
            },
        }
        if not n.is_leaf:
            rec.update({
                "feature_index": n.feature_index,
                "threshold": n.threshold,
                "left": n.left,
                "right": n.right,
            })
        nodes.append(rec)
    cfg = tree.config
    return {
        "format": TREE_FORMAT,
        "task": tree.task,
        "feature_names": tree.feature_names,
        "schema_fingerprint": tree.schema_fingerprint,
        "config": {
            "task": cfg.task,
            "max_depth": cfg.max_depth,
            "min_leaf": cfg.min_leaf,
            "search": cfg.search,
            "n_candidates": cfg.n_candidates,
            "ridge_reg": cfg.ridge_reg,
            "logistic_reg": cfg.logistic_reg,
            "seed": cfg.seed,
        },
        "nodes": nodes,
    }


def tree_from_dict(d: dict) -> LinearModelTree:
    if d.get("format") != TREE_FORMAT:
        raise LmtError(f"unsupported tree format {d.get('format')!r}")
    cfg = LmtConfig(**d["config"])
    nodes = []
    for rec in d["nodes"]:
        m = rec["model"]
        model = LeafModel(m["kind"], np.asarray(m["weights"], dtype=float),
                          float(m["intercept"]), float(m["loss"]))
        nodes.append(TreeNode(
            rec["id"], rec["depth"], rec["n_rows"], model,
            rec.get("feature_index"), rec.get("threshold"),
            rec.get("left"), rec.get("right"),
        ))
    return LinearModelTree(d["task"], nodes, cfg, list(d["feature_names"]),
                           d.get("schema_fingerprint", ""))


def tree_to_json(tree: LinearModelTree) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True, indent=2)


def tree_from_json(text: str) -> LinearModelTree:
    return tree_from_dict(json.loads(text))
