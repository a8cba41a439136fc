"""End-to-end explanation pipeline.

Given training data, a black-box oracle, and a test point: pick the K
nearest neighbors, train the conditional GAN on the (optionally
transformed) locality, sample a synthetic neighborhood, label it through
the oracle, fit a linear model tree on it, and read off the twofold
explanation (context rule + leaf-coefficient attributions). What-if
queries re-route a modified point through the fitted tree without
refitting.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field, replace

import numpy as np

from .ctgan import CtganConfig, sample as ctgan_sample, train_ctgan
from .evalkit.metrics import fidelity_classification, fidelity_regression
from .lmt import (
    CLASSIFICATION,
    LinearModelTree,
    LmtConfig,
    RuleConjunction,
    decision_path,
    fit_lmt,
    predict,
    tree_from_dict,
    tree_to_dict,
)
from .tabular import (
    Dataset,
    Schema,
    TabularError,
    apply_transforms,
    fit_transforms,
    invert_dataset,
    knn,
    onehot_encoder,
    row_from_named,
    transform_dataset,
)

ORACLE_PROTOCOL = "lmte-oracle/1"


class OracleError(RuntimeError):
    pass


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

class Oracle:
    """Batch prediction interface around the target model f(x).

    predict() returns one prediction per row (class index for
    classification); predict_proba() returns the class-1 probability.
    """

    task: str

    def predict(self, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessOracle(Oracle):
    def __init__(self, predict_fn, task: str, proba_fn=None):
        self.task = task
        self._predict = predict_fn
        self._proba = proba_fn

    def predict(self, data: Dataset) -> np.ndarray:
        out = np.asarray(self._predict(data), dtype=float)
        if out.shape != (data.n_rows,):
            raise OracleError(
                f"oracle returned {out.shape} predictions for {data.n_rows} rows")
        return out

    def predict_proba(self, data: Dataset) -> np.ndarray:
        if self._proba is None:
            return self.predict(data)
        out = np.asarray(self._proba(data), dtype=float)
        if out.shape != (data.n_rows,):
            raise OracleError(
                f"oracle returned {out.shape} probabilities for {data.n_rows} rows")
        return out


class ForestOracle(InProcessOracle):
    """Reference random forest behind the Oracle interface; encodes rows
    with the plain one-hot encoder before prediction."""

    def __init__(self, forest, schema: Schema):
        self.forest = forest
        self.schema = schema
        self._encoder = onehot_encoder(schema)
        super().__init__(self._run_predict, forest.task, self._run_proba)

    def _run_predict(self, data: Dataset):
        return self.forest.predict(apply_transforms(self._encoder, data))

    def _run_proba(self, data: Dataset):
        if self.forest.task == CLASSIFICATION:
            return self.forest.predict_proba(apply_transforms(self._encoder, data))
        return self.forest.predict(apply_transforms(self._encoder, data))


def _rows_payload(data: Dataset) -> list[list]:
    return data.raw_rows()


class SubprocessOracle(Oracle):
    """Oracle spoken to over NDJSON on stdin/stdout.

    The first line from the child must be the handshake
    {"protocol": "lmte-oracle/1", "task": ...}; afterwards each request
    {"id", "rows"} is answered by {"id", "preds", "probs"?}.
    """

    def __init__(self, cmd: list[str]):
        try:
            self.proc = subprocess.Popen(
                cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as e:
            raise OracleError(f"cannot start oracle {cmd!r}: {e}") from e
        line = self.proc.stdout.readline()
        try:
            hello = json.loads(line)
        except json.JSONDecodeError:
            self.close()
            raise OracleError(f"bad oracle handshake line: {line!r}") from None
        if hello.get("protocol") != ORACLE_PROTOCOL or "task" not in hello:
            self.close()
            raise OracleError(f"unsupported oracle handshake: {hello!r}")
        self.task = hello["task"]
        self._next_id = 0
        self._last_probs = None

    def _roundtrip(self, data: Dataset) -> dict:
        self._next_id += 1
        req = {"id": self._next_id, "rows": _rows_payload(data)}
        try:
            self.proc.stdin.write(json.dumps(req) + "\n")
            self.proc.stdin.flush()
            line = self.proc.stdout.readline()
        except (BrokenPipeError, OSError) as e:
            raise OracleError(f"oracle process died: {e}") from e
        if not line:
            raise OracleError("oracle closed its stdout")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError:
            raise OracleError(f"malformed oracle reply: {line!r}") from None
        if resp.get("id") != self._next_id:
            raise OracleError(f"oracle reply id {resp.get('id')} != request id {self._next_id}")
        if "preds" not in resp or len(resp["preds"]) != data.n_rows:
            raise OracleError(
                f"oracle returned {len(resp.get('preds', []))} predictions "
                f"for {data.n_rows} rows")
        if "probs" in resp and len(resp["probs"]) != data.n_rows:
            raise OracleError("oracle probs length mismatch")
        return resp

    def predict(self, data: Dataset) -> np.ndarray:
        resp = self._roundtrip(data)
        self._last_probs = resp.get("probs")
        return np.asarray(resp["preds"], dtype=float)

    def predict_proba(self, data: Dataset) -> np.ndarray:
        resp = self._roundtrip(data)
        if "probs" in resp:
            return np.asarray(resp["probs"], dtype=float)
        return np.asarray(resp["preds"], dtype=float)

    def close(self) -> None:
        if getattr(self, "proc", None) and self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class HttpOracle(Oracle):
    """POSTs {"id", "rows"} to <base>/predict, same wire format as the
    subprocess protocol."""

    def __init__(self, url: str, task: str):
        import httpx

        self.task = task
        self._url = url.rstrip("/") + "/predict"
        self._client = httpx.Client(timeout=30.0)
        self._next_id = 0

    def _roundtrip(self, data: Dataset) -> dict:
        import httpx

        self._next_id += 1
        try:
            r = self._client.post(self._url, json={
                "id": self._next_id, "rows": _rows_payload(data)})
            r.raise_for_status()
            resp = r.json()
        except httpx.HTTPError as e:
            raise OracleError(f"http oracle failed: {e}") from e
        if "preds" not in resp or len(resp["preds"]) != data.n_rows:
            raise OracleError(
                f"oracle returned {len(resp.get('preds', []))} predictions "
                f"for {data.n_rows} rows")
        return resp

    def predict(self, data: Dataset) -> np.ndarray:
        return np.asarray(self._roundtrip(data)["preds"], dtype=float)

    def predict_proba(self, data: Dataset) -> np.ndarray:
        resp = self._roundtrip(data)
        return np.asarray(resp.get("probs", resp["preds"]), dtype=float)

    def close(self) -> None:
        self._client.close()


_ORACLE_FACTORIES: dict[str, callable] = {}


def register_oracle_factory(name: str, factory) -> None:
    """Register a named in-process oracle builder for JSON specs."""
    _ORACLE_FACTORIES[name] = factory


def make_oracle(spec: dict, schema: Schema | None = None) -> Oracle:
    """Build an Oracle from a JSON spec.

    kinds: subprocess {cmd}, http {url, task}, builtin_forest {train_csv,
    label_column, task?, n_trees?, max_depth?, seed?}, in_process
    {factory, params?} referencing a registered factory.
    """
    kind = spec.get("kind")
    if kind == "subprocess":
        return SubprocessOracle(spec["cmd"])
    if kind == "http":
        return HttpOracle(spec["url"], spec.get("task", CLASSIFICATION))
    if kind == "in_process":
        name = spec.get("factory")
        if name not in _ORACLE_FACTORIES:
            raise OracleError(f"unknown in-process oracle factory {name!r}")
        return _ORACLE_FACTORIES[name](spec.get("params", {}), schema)
    if kind == "builtin_forest":
        return _builtin_forest_oracle(spec)
    raise OracleError(f"unknown oracle kind {kind!r}")


def _builtin_forest_oracle(spec: dict) -> Oracle:
    from .evalkit.forest import ForestConfig, fit_reference_forest
    from .tabular import load_csv

    task = spec.get("task", CLASSIFICATION)
    full = load_csv(spec["train_csv"])
    label_col = spec.get("label_column", "label")
    li = full.schema.column_index(label_col)
    feat_idx = [j for j in range(len(full.schema.columns)) if j != li]
    feat_schema = Schema(tuple(full.schema.columns[j] for j in feat_idx))
    feats = Dataset(feat_schema, full.values[:, feat_idx])
    label_col_def = full.schema.columns[li]
    y = full.values[:, li]
    if label_col_def.kind == "categorical" and task == CLASSIFICATION:
        y = y.astype(float)
    enc = apply_transforms(onehot_encoder(feat_schema), feats)
    cfg = ForestConfig(task=task, n_trees=spec.get("n_trees", 100),
                       max_depth=spec.get("max_depth"), seed=spec.get("seed", 0))
    forest = fit_reference_forest(enc, y, cfg)
    return ForestOracle(forest, feat_schema)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class SessionConfig:
    """Everything needed to regenerate an explanation bit-identically."""

    task: str = CLASSIFICATION
    k: int = 20
    n_synthetic: int = 500
    use_minmax: bool = False
    use_boxcox: bool = False
    transform_fit_scope: str = "locality"   # "locality" | "train"
    label_mode: str = "hard"       # "hard" | "proba" (classification only)
    gan: CtganConfig = field(default_factory=CtganConfig)
    lmt: LmtConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.n_synthetic < 1:
            raise PipelineError("k and n_synthetic must be >= 1")
        if self.transform_fit_scope not in ("locality", "train"):
            raise PipelineError(
                f"unknown transform_fit_scope {self.transform_fit_scope!r}")
        if self.lmt is None:
            self.lmt = LmtConfig(task=self.task)

    def to_dict(self) -> dict:
        return {
            "task": self.task, "k": self.k, "n_synthetic": self.n_synthetic,
            "use_minmax": self.use_minmax, "use_boxcox": self.use_boxcox,
            "transform_fit_scope": self.transform_fit_scope,
            "label_mode": self.label_mode, "gan": self.gan.to_dict(),
            "lmt": {
                "task": self.lmt.task, "max_depth": self.lmt.max_depth,
                "min_leaf": self.lmt.min_leaf, "search": self.lmt.search,
                "n_candidates": self.lmt.n_candidates,
                "ridge_reg": self.lmt.ridge_reg,
                "logistic_reg": self.lmt.logistic_reg, "seed": self.lmt.seed,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        d = dict(d)
        if "gan" in d:
            d["gan"] = CtganConfig.from_dict(d["gan"])
        if "lmt" in d and d["lmt"] is not None:
            d["lmt"] = LmtConfig(**d["lmt"])
        return cls(**d)


@dataclass
class Neighborhood:
    """Synthetic locality with oracle labels and full provenance."""

    rows: Dataset
    labels: np.ndarray
    provenance: dict

    @property
    def n_rows(self) -> int:
        return self.rows.n_rows

    def to_dict(self) -> dict:
        return {
            "schema": self.rows.schema.to_dict(),
            "rows": self.rows.raw_rows(),
            "labels": [float(v) for v in self.labels],
            "provenance": self.provenance,
        }


def generate_neighborhood(train: Dataset, x_t: np.ndarray, oracle: Oracle,
                          config: SessionConfig) -> Neighborhood:
    """KNN locality -> transforms -> GAN -> sample -> inverse -> one oracle call."""
    if train.n_rows == 0:
        raise PipelineError("empty training data")
    x_t = np.asarray(x_t, dtype=float)
    cfg = config
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    locality = knn(train, x_t, min(cfg.k, train.n_rows))
    fit_on = train if cfg.transform_fit_scope == "train" else locality
    transforms = fit_transforms(fit_on, use_minmax=cfg.use_minmax,
                                use_boxcox=cfg.use_boxcox)
    gan_input = transform_dataset(transforms, locality)
    gan_cfg = replace(cfg.gan, seed=int(seeds[0]))
    model = train_ctgan(gan_input, gan_cfg)
    raw_syn = ctgan_sample(model, cfg.n_synthetic, seed=int(seeds[1]))
    clamp_counts: dict[str, int] = {}
    synthetic = invert_dataset(transforms, raw_syn, clamp_counts)
    if cfg.task == CLASSIFICATION and cfg.label_mode == "proba":
        labels = oracle.predict_proba(synthetic)
    else:
        labels = oracle.predict(synthetic)
    provenance = {
        "sampler": "ctgan",
        "k": cfg.k,
        "n": cfg.n_synthetic,
        "seed": cfg.seed,
        "use_minmax": cfg.use_minmax,
        "use_boxcox": cfg.use_boxcox,
        "label_mode": cfg.label_mode,
        "epochs": cfg.gan.epochs,
        "clamp_counts": clamp_counts,
    }
    return Neighborhood(synthetic, labels, provenance)


@dataclass
class Attribution:
    feature: str            # original column name
    encoded_feature: str    # encoded slot name ("color=g" for one-hot members)
    coefficient: float
    encoded_value: float
    value: float            # coefficient * encoded value
    category: str | None = None

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "encoded_feature": self.encoded_feature,
            "coefficient": self.coefficient,
            "encoded_value": self.encoded_value,
            "value": self.value,
            "category": self.category,
        }


@dataclass
class Explanation:
    test_point: dict
    surrogate_prediction: float
    oracle_prediction: float | None
    context: RuleConjunction
    attributions: list[Attribution]
    intercept: float
    leaf_id: int
    fidelity: float | None
    task: str

    def to_dict(self) -> dict:
        return {
            "test_point": self.test_point,
            "surrogate_prediction": self.surrogate_prediction,
            "oracle_prediction": self.oracle_prediction,
            "context": self.context.to_dicts(),
            "context_text": self.context.render(),
            "attributions": [a.to_dict() for a in self.attributions],
            "intercept": self.intercept,
            "leaf_id": self.leaf_id,
            "fidelity": self.fidelity,
            "task": self.task,
        }

    def render_text(self, top_k: int = 5) -> str:
        lines = [f"context: {self.context.render()}"]
        pred = self.surrogate_prediction
        lines.append(f"surrogate prediction: {pred:.6g}")
        if self.oracle_prediction is not None:
            lines.append(f"target prediction: {self.oracle_prediction:.6g}")
        if self.fidelity is not None:
            lines.append(f"neighborhood fidelity: {self.fidelity:.4g}")
        lines.append("")
        lines.append(f"top {top_k} attributions:")
        ranked = top_attributions(self, top_k)
        labels = [a.encoded_feature if a.category is not None else a.feature
                  for a in ranked]
        width = max((len(l) for l in labels), default=8)
        for label, a in zip(labels, ranked):
            lines.append(f"  {label:<{width + 4}} {a.value:+.6g}")
        return "\n".join(lines)


@dataclass
class Surrogate:
    """A fitted tree plus the encoder that feeds it."""

    tree: LinearModelTree
    schema: Schema
    fidelity: float | None = None

    def encode(self, data: Dataset) -> np.ndarray:
        return apply_transforms(onehot_encoder(self.schema), data)

    def encode_row(self, row: np.ndarray) -> np.ndarray:
        return self.encode(Dataset(self.schema, np.asarray(row, float)[None, :]))[0]


def fit_surrogate(neighborhood: Neighborhood, lmt_config: LmtConfig,
                  schema: Schema) -> Surrogate:
    """Fit the linear model tree on the one-hot encoded neighborhood and
    record its fidelity against the oracle labels."""
    encoder = onehot_encoder(schema)
    X = apply_transforms(encoder, neighborhood.rows)
    y = np.asarray(neighborhood.labels, dtype=float)
    cfg = lmt_config.resolved(X.shape[1])
    if X.shape[0] < cfg.min_leaf:
        raise PipelineError(
            f"neighborhood of {X.shape[0]} rows is below min_leaf {cfg.min_leaf}; "
            f"increase n_synthetic")
    tree = fit_lmt(X, y, cfg, feature_names=encoder.encoded_names(),
                   schema_fingerprint=schema.fingerprint())
    pred = predict(tree, X)
    if cfg.task == CLASSIFICATION:
        fid = fidelity_classification((pred >= 0.5).astype(float), y)
    else:
        fid = fidelity_regression(pred, y) if float(np.std(y)) > 0 else None
    return Surrogate(tree, schema, fid)


def explain_with_surrogate(surrogate: Surrogate, x_t: np.ndarray,
                           oracle_prediction: float | None = None) -> Explanation:
    """Route a point through a fitted surrogate and assemble the explanation."""
    schema = surrogate.schema
    x_t = np.asarray(x_t, dtype=float)
    enc = surrogate.encode_row(x_t)
    tree = surrogate.tree
    leaf = tree.leaf_for(enc)
    context = decision_path(tree, enc, schema)
    layout = onehot_encoder(schema)
    names = layout.encoded_names()
    attributions = []
    for j, w in enumerate(leaf.model.weights):
        ci, category = layout.encoded_column_of(j)
        attributions.append(Attribution(
            feature=schema.columns[ci].name,
            encoded_feature=names[j],
            coefficient=float(w),
            encoded_value=float(enc[j]),
            value=float(w * enc[j]),
            category=category,
        ))
    point = Dataset(schema, x_t[None, :]).to_named_row(0)
    return Explanation(
        test_point=point,
        surrogate_prediction=float(predict(tree, enc)),
        oracle_prediction=oracle_prediction,
        context=context,
        attributions=attributions,
        intercept=float(leaf.model.intercept),
        leaf_id=leaf.node_id,
        fidelity=surrogate.fidelity,
        task=tree.task,
    )


def explain_point(x_t: np.ndarray, neighborhood: Neighborhood,
                  lmt_config: LmtConfig, schema: Schema,
                  oracle: Oracle | None = None) -> Explanation:
    """Fit a surrogate on the neighborhood and explain the test point.

    The optional oracle fills in the target model's own prediction Y_t.
    """
    surrogate = fit_surrogate(neighborhood, lmt_config, schema)
    y_t = None
    if oracle is not None:
        x = np.asarray(x_t, dtype=float)
        y_t = float(oracle.predict(Dataset(schema, x[None, :]))[0])
    return explain_with_surrogate(surrogate, x_t, y_t)


@dataclass
class WhatIfResult:
    explanation: Explanation
    leaf_changed: bool
    overridden: dict


def what_if(tree: LinearModelTree, schema: Schema, x_t: np.ndarray,
            overrides: dict, fidelity: float | None = None) -> WhatIfResult:
    """Re-route a hypothetically modified point through the existing tree.

    No refit happens; the response flags whether the modified point lands
    in a different leaf.
    """
    x_t = np.asarray(x_t, dtype=float)
    named = Dataset(schema, x_t[None, :]).to_named_row(0)
    for key, value in overrides.items():
        if key not in named:
            raise TabularError(f"unknown feature {key!r}")
        named[key] = value
    new_row = row_from_named(schema, named)
    surrogate = Surrogate(tree, schema, fidelity)
    base_leaf = tree.leaf_for(surrogate.encode_row(x_t)).node_id
    expl = explain_with_surrogate(surrogate, new_row)
    return WhatIfResult(expl, leaf_changed=expl.leaf_id != base_leaf,
                        overridden=dict(overrides))


def top_attributions(explanation: Explanation, n: int = 5) -> list[Attribution]:
    """The n largest attributions by absolute value.

    One-hot members collapse into one entry per categorical column, labeled
    with the active category; ties keep schema feature order.
    """
    if n < 1:
        raise PipelineError("n must be >= 1")
    merged: dict[str, Attribution] = {}
    order: list[str] = []
    for a in explanation.attributions:
        if a.feature not in merged:
            merged[a.feature] = a
            order.append(a.feature)
            continue
        if a.category is not None:
            prev = merged[a.feature]
            value = prev.value + a.value
            active = a if a.encoded_value >= prev.encoded_value else prev
            merged[a.feature] = Attribution(
                feature=a.feature,
                encoded_feature=active.encoded_feature,
                coefficient=active.coefficient,
                encoded_value=active.encoded_value,
                value=value,
                category=active.category,
            )
    ranked = sorted(order, key=lambda f: -abs(merged[f].value))
    return [merged[f] for f in ranked[:n]]


# ---------------------------------------------------------------------------
# Session bundle (used by the CLI and the HTTP service)
# ---------------------------------------------------------------------------

SESSION_FORMAT = "lmte-session/1"


@dataclass
class ExplainSession:
    schema: Schema
    config: SessionConfig
    test_point: np.ndarray
    neighborhood: Neighborhood
    surrogate: Surrogate
    explanation: Explanation

    def to_dict(self) -> dict:
        return {
            "format": SESSION_FORMAT,
            "schema": self.schema.to_dict(),
            "config": self.config.to_dict(),
            "test_point": Dataset(self.schema,
                                  self.test_point[None, :]).to_named_row(0),
            "tree": tree_to_dict(self.surrogate.tree),
            "fidelity": self.surrogate.fidelity,
            "explanation": self.explanation.to_dict(),
            "provenance": self.neighborhood.provenance,
        }


def run_session(train: Dataset, x_t: np.ndarray, oracle: Oracle,
                config: SessionConfig) -> ExplainSession:
    """The full pipeline for one test point."""
    neighborhood = generate_neighborhood(train, x_t, oracle, config)
    surrogate = fit_surrogate(neighborhood, config.lmt, train.schema)
    x = np.asarray(x_t, dtype=float)
    y_t = float(oracle.predict(Dataset(train.schema, x[None, :]))[0])
    explanation = explain_with_surrogate(surrogate, x_t, y_t)
    return ExplainSession(train.schema, config, x, neighborhood, surrogate,
                          explanation)


def session_snapshot_save(session: ExplainSession, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(session.to_dict(), fh, sort_keys=True, indent=2)


@dataclass
class SessionSnapshot:
    """The reloadable part of a saved session: schema + tree + test point."""

    schema: Schema
    config: dict
    test_point: np.ndarray
    tree: LinearModelTree
    fidelity: float | None


def session_snapshot_load(path) -> SessionSnapshot:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != SESSION_FORMAT:
        raise PipelineError(f"unsupported session format {d.get('format')!r}")
    schema = Schema.from_dict(d["schema"])
    tree = tree_from_dict(d["tree"])
    x_t = row_from_named(schema, d["test_point"])
    return SessionSnapshot(schema, d.get("config", {}), x_t, tree, d.get("fidelity"))
