"""Experiment designs for the evaluation harness.

Each runner reproduces one of the published comparison protocols at desk
scale: surrogate power on shared URS neighborhoods, cross-neighborhood
generalization, end-to-end pipeline fidelity, context-rule quality, and
recall faithfulness against an interpretable target. Experiments emit a
MetricReport (JSON-serializable records + aggregates + text table).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..ctgan import CtganConfig
from ..explain import (
    ForestOracle,
    SessionConfig,
    explain_with_surrogate,
    fit_surrogate,
    generate_neighborhood,
)
from ..lmt import (
    CLASSIFICATION,
    REGRESSION,
    LmtConfig,
    fit_lmt,
    fit_logistic,
    fit_ridge,
    predict,
)
from ..tabular import Dataset, apply_transforms, onehot_encoder
from .datasets import load_bundled
from .forest import CartTree, ForestConfig, fit_reference_forest
from .metrics import (
    TrainStats,
    coverage_precision,
    fidelity_classification,
    fidelity_regression,
    lime_kernel_weights,
    recall_faithfulness,
    urs_sample,
)

EXPERIMENTS = (
    "surrogate_power",
    "generalization",
    "end_to_end",
    "rule_quality",
    "recall_faithfulness",
)


class ExperimentError(ValueError):
    pass


@dataclass
class MetricReport:
    experiment: str
    datasets: list[str]
    records: list[dict]
    aggregates: dict
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "datasets": self.datasets,
            "records": self.records,
            "aggregates": self.aggregates,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def render_text(self) -> str:
        lines = [f"experiment: {self.experiment}"]
        for ds, agg in self.aggregates.items():
            lines.append(f"\n[{ds}]")
            keys = sorted(agg)
            width = max(len(k) for k in keys)
            for k in keys:
                v = agg[k]
                shown = f"{v:.4f}" if isinstance(v, float) else str(v)
                lines.append(f"  {k:<{width + 2}} {shown}")
        return "\n".join(lines)


def _point_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(index,)).generate_state(1)[0])


def _run_points(n: int, fn, jobs: int = 1) -> list:
    """Evaluate fn(i) for i in range(n), optionally across a thread pool.

    Each point derives its own RNG stream from (master seed, index), so the
    results are identical regardless of execution order or jobs.
    """
    if jobs <= 1:
        return [fn(i) for i in range(n)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(n)))


@dataclass
class Prepared:
    """A dataset split with a fitted target oracle."""

    name: str
    task: str
    train: Dataset
    test: Dataset
    oracle: ForestOracle
    stats: TrainStats


def prepare(name: str, n_test: int, seed: int, target_cfg: dict | None = None,
            oracle_factory=None) -> Prepared:
    ds, y, task = load_bundled(name)
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n_rows)
    if not 1 <= n_test < ds.n_rows:
        raise ExperimentError(f"n_test_points {n_test} out of range")
    test = ds.take(order[:n_test])
    train = ds.take(order[n_test:])
    y_train = y[order[n_test:]]
    if oracle_factory is not None:
        oracle = oracle_factory(train, y_train, task)
    else:
        tc = dict(target_cfg or {})
        cfg = ForestConfig(task=task, n_trees=tc.get("n_trees", 100),
                           max_depth=tc.get("max_depth"), seed=seed)
        enc = apply_transforms(onehot_encoder(train.schema), train)
        forest = fit_reference_forest(enc, y_train, cfg)
        oracle = ForestOracle(forest, train.schema)
    return Prepared(name, task, train, test, oracle, TrainStats(train))


def _session_config(task: str, overrides: dict | None, seed: int) -> SessionConfig:
    d = dict(overrides or {})
    gan = CtganConfig.from_dict(d.pop("gan", {})) if "gan" in d else CtganConfig()
    lmt = LmtConfig(**d.pop("lmt")) if "lmt" in d else LmtConfig(task=task)
    return SessionConfig(task=task, gan=gan, lmt=lmt, seed=seed, **d)


def _linear_fit(enc, labels, task, weights=None):
    if task == CLASSIFICATION:
        return fit_logistic(enc, labels, sample_weight=weights)
    return fit_ridge(enc, labels, sample_weight=weights)


def _fidelity(task, preds, labels):
    if task == CLASSIFICATION:
        return fidelity_classification((np.asarray(preds) >= 0.5).astype(float),
                                       labels)
    return fidelity_regression(preds, labels)


def _aggregate(task, values) -> float:
    """Mean for classification fidelity, median for standardized RMSE."""
    arr = np.asarray(values, dtype=float)
    return float(arr.mean() if task == CLASSIFICATION else np.median(arr))


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------

def run_surrogate_power(config: dict) -> MetricReport:
    """Both surrogates trained and evaluated on the same URS neighborhoods."""
    datasets = config.get("datasets") or [config["dataset"]]
    n_test = config.get("n_test_points", 25)
    seed = config.get("seed", 0)
    n_syn = config.get("n_synthetic", 500)
    use_kernel = config.get("lime_kernel", False)
    jobs = config.get("jobs", 1)
    records, aggregates = [], {}
    for name in datasets:
        prep = prepare(name, n_test, seed, config.get("target"))
        task = prep.task
        lmt_cfg = LmtConfig(task=task, **(config.get("lmt") or {}))

        def point_record(i):
            pseed = _point_seed(seed, i)
            x_t = prep.test.row(i)
            neigh = urs_sample(prep.stats, x_t, n_syn, seed=pseed)
            labels = prep.oracle.predict(neigh)
            if task == CLASSIFICATION and np.unique(labels).size < 2:
                # Degenerate locality: both surrogates are trivially perfect.
                return {"dataset": name, "point": i, "lmt": 1.0,
                        "linear": 1.0, "degenerate": True}
            enc = apply_transforms(onehot_encoder(neigh.schema), neigh)
            tree = fit_lmt(enc, labels, lmt_cfg)
            lmt_fid = _fidelity(task, predict(tree, enc), labels)
            weights = lime_kernel_weights(neigh, x_t) if use_kernel else None
            lin = _linear_fit(enc, labels, task, weights)
            lin_fid = _fidelity(task, lin.predict(enc), labels)
            return {"dataset": name, "point": i, "lmt": lmt_fid,
                    "linear": lin_fid, "degenerate": False}

        recs = _run_points(prep.test.n_rows, point_record, jobs)
        records.extend(recs)
        per_lmt = [r["lmt"] for r in recs]
        per_lin = [r["linear"] for r in recs]
        better = [(l >= s) if task == CLASSIFICATION else (l <= s)
                  for l, s in zip(per_lmt, per_lin)]
        aggregates[name] = {
            "task": task,
            "lmt": _aggregate(task, per_lmt),
            "linear": _aggregate(task, per_lin),
            "lmt_no_worse_share": float(np.mean(better)),
        }
    return MetricReport("surrogate_power", datasets, records, aggregates, config)


def run_generalization(config: dict) -> MetricReport:
    """Surrogates trained on their own sampler's neighborhood, evaluated on
    both their own and the opposing sampler's neighborhood."""
    datasets = config.get("datasets") or [config["dataset"]]
    n_test = config.get("n_test_points", 25)
    seed = config.get("seed", 0)
    records, aggregates = [], {}
    jobs = config.get("jobs", 1)
    for name in datasets:
        prep = prepare(name, n_test, seed, config.get("target"))
        task = prep.task

        def point_record(i):
            pseed = _point_seed(seed, i)
            x_t = prep.test.row(i)
            scfg = _session_config(task, config.get("session"), pseed)
            gan_neigh = generate_neighborhood(prep.train, x_t, prep.oracle, scfg)
            urs = urs_sample(prep.stats, x_t, scfg.n_synthetic, seed=pseed + 1)
            urs_labels = prep.oracle.predict(urs)

            enc_gan = apply_transforms(onehot_encoder(prep.train.schema),
                                       gan_neigh.rows)
            enc_urs = apply_transforms(onehot_encoder(prep.train.schema), urs)

            tree = fit_lmt(enc_gan, gan_neigh.labels, scfg.lmt)
            lin = _linear_fit(enc_urs, urs_labels, task)
            return {
                "dataset": name, "point": i,
                "lmt_own": _fidelity(task, predict(tree, enc_gan), gan_neigh.labels),
                "lmt_held": _fidelity(task, predict(tree, enc_urs), urs_labels),
                "linear_own": _fidelity(task, lin.predict(enc_urs), urs_labels),
                "linear_held": _fidelity(task, lin.predict(enc_gan),
                                         gan_neigh.labels),
            }

        recs = _run_points(prep.test.n_rows, point_record, jobs)
        records.extend(recs)
        cells = {k: [r[k] for r in recs]
                 for k in ("lmt_own", "lmt_held", "linear_own", "linear_held")}
        aggregates[name] = {"task": task, "n_used": len(recs)}
        for k, vals in cells.items():
            aggregates[name][k] = _aggregate(task, vals)
        if task == REGRESSION:
            aggregates[name]["lmt_drop"] = \
                aggregates[name]["lmt_held"] - aggregates[name]["lmt_own"]
            aggregates[name]["linear_drop"] = \
                aggregates[name]["linear_held"] - aggregates[name]["linear_own"]
    return MetricReport("generalization", datasets, records, aggregates, config)


def run_end_to_end(config: dict) -> MetricReport:
    """Full-pipeline fidelity on the pipeline's own neighborhood, per method."""
    datasets = config.get("datasets") or [config["dataset"]]
    n_test = config.get("n_test_points", 50)
    seed = config.get("seed", 0)
    records, aggregates = [], {}
    for name in datasets:
        prep = prepare(name, n_test, seed, config.get("target"))
        task = prep.task
        if task != CLASSIFICATION:
            raise ExperimentError("end_to_end compares classification fidelity")

        def point_record(i):
            pseed = _point_seed(seed, i)
            x_t = prep.test.row(i)
            scfg = _session_config(task, config.get("session"), pseed)
            neigh = generate_neighborhood(prep.train, x_t, prep.oracle, scfg)
            surrogate = fit_surrogate(neigh, scfg.lmt, prep.train.schema)
            lmte_fid = surrogate.fidelity if surrogate.fidelity is not None else 1.0

            urs = urs_sample(prep.stats, x_t, scfg.n_synthetic, seed=pseed + 1)
            urs_labels = prep.oracle.predict(urs)
            enc_urs = apply_transforms(onehot_encoder(prep.train.schema), urs)
            if np.unique(urs_labels).size < 2:
                lime_fid = 1.0
            else:
                lin = _linear_fit(enc_urs, urs_labels, task)
                lime_fid = _fidelity(task, lin.predict(enc_urs), urs_labels)
            return {"dataset": name, "point": i, "lmte": lmte_fid,
                    "lime_arm": lime_fid}

        recs = _run_points(prep.test.n_rows, point_record, config.get("jobs", 1))
        records.extend(recs)
        aggregates[name] = {
            "task": task,
            "lmte": float(np.mean([r["lmte"] for r in recs])),
            "lime_arm": float(np.mean([r["lime_arm"] for r in recs])),
        }
    return MetricReport("end_to_end", datasets, records, aggregates, config)


def run_rule_quality(config: dict) -> MetricReport:
    """Coverage and precision of LMTE context rules, median per batch of
    test points, plus the mean of the batch medians."""
    datasets = config.get("datasets") or [config["dataset"]]
    batches = config.get("batches", [100, 100])
    seed = config.get("seed", 0)
    n_test = int(sum(batches))
    target = dict(config.get("target") or {})
    target.setdefault("n_trees", 20)
    records, aggregates = [], {}
    for name in datasets:
        prep = prepare(name, n_test, seed, target)
        if prep.task != CLASSIFICATION:
            raise ExperimentError("rule_quality is a classification design")
        train_labels = prep.oracle.predict(prep.train)

        def point_record(i):
            pseed = _point_seed(seed, i)
            x_t = prep.test.row(i)
            scfg = _session_config(prep.task, config.get("session"), pseed)
            neigh = generate_neighborhood(prep.train, x_t, prep.oracle, scfg)
            surrogate = fit_surrogate(neigh, scfg.lmt, prep.train.schema)
            expl = explain_with_surrogate(surrogate, x_t)
            leaf = surrogate.tree.nodes[expl.leaf_id]
            cp = coverage_precision(expl.context, leaf.model, train_labels,
                                    prep.train)
            return {"dataset": name, "point": i, "coverage": cp["coverage"],
                    "precision": cp["precision"], "n_covered": cp["n_covered"]}

        recs = _run_points(n_test, point_record, config.get("jobs", 1))
        records.extend(recs)
        batch_meds = []
        start = 0
        for bsize in batches:
            chunk = recs[start:start + bsize]
            start += bsize
            covs = [r["coverage"] for r in chunk]
            precs = [r["precision"] for r in chunk if r["precision"] is not None]
            batch_meds.append({
                "coverage_median": float(np.median(covs)),
                "precision_median": float(np.median(precs)) if precs else None,
            })
        aggregates[name] = {
            "task": prep.task,
            "batch_medians": batch_meds,
            "coverage": float(np.mean([b["coverage_median"] for b in batch_meds])),
            "precision": float(np.mean([b["precision_median"] for b in batch_meds
                                        if b["precision_median"] is not None])),
        }
    return MetricReport("rule_quality", datasets, records, aggregates, config)


def _tree_oracle_factory(max_depth: int):
    def factory(train: Dataset, y: np.ndarray, task: str) -> ForestOracle:
        enc = apply_transforms(onehot_encoder(train.schema), train)
        cfg = ForestConfig(task=task, n_trees=1, max_depth=max_depth,
                           bootstrap=False, feature_subset="all", seed=0)
        forest = fit_reference_forest(enc, y, cfg)
        return ForestOracle(forest, train.schema)
    return factory


def run_recall_faithfulness(config: dict) -> MetricReport:
    """Recall of LMTE attributions against a shallow decision tree target's
    own decision-path features."""
    datasets = config.get("datasets") or [config["dataset"]]
    n_test = config.get("n_test_points", 20)
    seed = config.get("seed", 0)
    depth = config.get("target_depth", 3)
    records, aggregates = [], {}
    for name in datasets:
        prep = prepare(name, n_test, seed,
                       oracle_factory=_tree_oracle_factory(depth))
        if prep.task != CLASSIFICATION:
            raise ExperimentError("recall_faithfulness is a classification design")
        target_tree: CartTree = prep.oracle.forest.trees[0]
        encoder = onehot_encoder(prep.train.schema)

        def point_record(i):
            pseed = _point_seed(seed, i)
            x_t = prep.test.row(i)
            scfg = _session_config(prep.task, config.get("session"), pseed)
            neigh = generate_neighborhood(prep.train, x_t, prep.oracle, scfg)
            surrogate = fit_surrogate(neigh, scfg.lmt, prep.train.schema)
            expl = explain_with_surrogate(surrogate, x_t)

            enc_x = surrogate.encode_row(x_t)
            true_feats = set()
            for j in target_tree.path_features(enc_x):
                ci, _ = encoder.encoded_column_of(j)
                true_feats.add(prep.train.schema.columns[ci].name)
            if not true_feats:
                return None  # depth-0 target tree has no explanation to recover

            by_feature: dict[str, float] = {}
            for a in expl.attributions:
                by_feature[a.feature] = by_feature.get(a.feature, 0.0) + abs(a.value)
            recall = recall_faithfulness(by_feature, true_feats)
            return {"dataset": name, "point": i, "recall": recall,
                    "true_features": sorted(true_feats)}

        recs = [r for r in _run_points(prep.test.n_rows, point_record,
                                       config.get("jobs", 1)) if r is not None]
        records.extend(recs)
        recalls = [r["recall"] for r in recs]
        aggregates[name] = {
            "task": prep.task,
            "recall": float(np.mean(recalls)) if recalls else None,
            "n_used": len(recalls),
        }
    return MetricReport("recall_faithfulness", datasets, records, aggregates, config)


_RUNNERS = {
    "surrogate_power": run_surrogate_power,
    "generalization": run_generalization,
    "end_to_end": run_end_to_end,
    "rule_quality": run_rule_quality,
    "recall_faithfulness": run_recall_faithfulness,
}


def run_experiment(config: dict) -> MetricReport:
    """Dispatch an experiment config to its runner."""
    name = config.get("experiment")
    if name not in _RUNNERS:
        raise ExperimentError(
            f"unknown experiment {name!r}; available: {sorted(_RUNNERS)}")
    if config.get("n_test_points") == 0 or config.get("batches") == []:
        raise ExperimentError("experiment needs at least one test point")
    return _RUNNERS[name](config)
