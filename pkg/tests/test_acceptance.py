"""Acceptance suite: one test per release criterion.

Each test prints a single `[ACCEPTANCE] <criterion>: PASS/FAIL` line
(visible with `pytest -s` or on failure) and enforces the criterion's
threshold and runtime budget. Run with:

    pytest tests/test_acceptance.py -v -s
"""

import json
import sys
import time

import numpy as np
import pytest

from lmte.ctgan import fit_mode_normalizer
from lmte.evalkit.datasets import make_two_moons
from lmte.evalkit.experiments import run_experiment
from lmte.evalkit.forest import ForestConfig, fit_reference_forest
from lmte.evalkit.metrics import (
    coverage_precision,
    fidelity_classification,
    fidelity_regression,
    recall_faithfulness,
)
from lmte.explain import ForestOracle, SessionConfig, SubprocessOracle, run_session
from lmte.lmt import (
    Condition,
    LmtConfig,
    RuleConjunction,
    best_split,
    fit_lmt,
    fit_logistic,
    fit_ridge,
    predict,
)
from lmte.neural import gradient_penalty, mlp_init
from lmte.tabular import (
    Column,
    Dataset,
    Schema,
    apply_transforms,
    fit_transforms,
    invert_transforms,
    onehot_encoder,
)


def report(name: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\n[ACCEPTANCE] {name}: {status} ({detail})", flush=True)
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def moons_forest():
    ds, y, _ = make_two_moons(500)
    enc = apply_transforms(onehot_encoder(ds.schema), ds)
    forest = fit_reference_forest(enc, y, ForestConfig(n_trees=100, seed=0))
    return ds, ForestOracle(forest, ds.schema)


def test_artificial_data_fidelity(moons_forest):
    """Boundary-point CTGAN neighborhood on two-moons: LMT fidelity >= 0.93."""
    t0 = time.time()
    ds, oracle = moons_forest
    probs = oracle.predict_proba(ds)
    boundary = ds.row(int(np.argmin(np.abs(probs - 0.5))))
    session = run_session(ds, boundary, oracle,
                          SessionConfig(task="classification", seed=11))
    fid = session.surrogate.fidelity
    elapsed = time.time() - t0
    report("artificial-data-fidelity",
           fid >= 0.93 and elapsed <= 120,
           f"fidelity={fid:.4f} (>=0.93), runtime={elapsed:.0f}s (<=120s)")


def test_surrogate_power_ordering():
    """On URS neighborhoods the LMT beats the flat linear surrogate in >=80%
    of 25 test points: fidelity (classification), standardized RMSE
    (regression)."""
    t0 = time.time()
    shares, details = [], []
    for datasets in (["two_moons", "rings"], ["curve_reg"]):
        rep = run_experiment({
            "experiment": "surrogate_power",
            "datasets": datasets,
            "n_test_points": 25,
            "seed": 3,
        })
        for name, agg in rep.aggregates.items():
            shares.append(agg["lmt_no_worse_share"])
            details.append(f"{name}: lmt={agg['lmt']:.3f} linear={agg['linear']:.3f} "
                           f"share={agg['lmt_no_worse_share']:.2f}")
    elapsed = time.time() - t0
    report("surrogate-power-ordering",
           all(s >= 0.8 for s in shares) and elapsed <= 600,
           "; ".join(details) + f"; runtime={elapsed:.0f}s (<=600s)")


def test_generalization_asymmetry():
    """LMT trained on its GAN locality keeps own-neighborhood fidelity >=0.93,
    and in regression it degrades more on URS-held-out data than the linear
    surrogate degrades on GAN-held-out data."""
    rep_c = run_experiment({"experiment": "generalization",
                            "datasets": ["two_moons"], "n_test_points": 25,
                            "seed": 2})
    clf = rep_c.aggregates["two_moons"]
    rep_r = run_experiment({"experiment": "generalization",
                            "datasets": ["curve_reg"], "n_test_points": 25,
                            "seed": 2})
    reg = rep_r.aggregates["curve_reg"]
    ok = clf["lmt_own"] >= 0.93 and reg["lmt_drop"] > reg["linear_drop"]
    report("generalization-asymmetry", ok,
           f"own fidelity={clf['lmt_own']:.4f} (>=0.93); regression drops: "
           f"lmt={reg['lmt_drop']:.3f} > linear={reg['linear_drop']:.3f}")


def test_end_to_end_fidelity():
    """Full pipeline mean fidelity >= 0.90 over 25 points on two datasets."""
    rep = run_experiment({"experiment": "end_to_end",
                          "datasets": ["two_moons", "rings"],
                          "n_test_points": 25, "seed": 4})
    vals = {name: agg["lmte"] for name, agg in rep.aggregates.items()}
    report("end-to-end-fidelity",
           all(v >= 0.90 for v in vals.values()),
           "; ".join(f"{k}={v:.4f}" for k, v in vals.items()) + " (>=0.90)")


def test_rule_coverage_precision():
    """Context rules reach coverage >= 0.3 at precision >= 0.6."""
    rep = run_experiment({
        "experiment": "rule_quality",
        "datasets": ["slopes6"],
        "batches": [10, 10],
        "seed": 5,
        "session": {"k": 40, "lmt": {"task": "classification", "min_leaf": 150}},
    })
    agg = rep.aggregates["slopes6"]
    report("rule-coverage-precision",
           agg["coverage"] >= 0.3 and agg["precision"] >= 0.6,
           f"coverage={agg['coverage']:.3f} (>=0.3), "
           f"precision={agg['precision']:.3f} (>=0.6)")


def test_recall_faithfulness():
    """Against a depth-3 decision-tree target, attribution recall >= 0.7."""
    rep = run_experiment({
        "experiment": "recall_faithfulness",
        "datasets": ["slopes6", "ridge8"],
        "n_test_points": 20,
        "seed": 6,
        "target_depth": 3,
    })
    vals = {name: agg["recall"] for name, agg in rep.aggregates.items()}
    report("recall-faithfulness",
           all(v is not None and v >= 0.7 for v in vals.values()),
           "; ".join(f"{k}={v:.3f}" for k, v in vals.items()) + " (>=0.7)")


def test_property_suite():
    """Always-on numeric properties, end to end in under 5 minutes."""
    t0 = time.time()
    rng = np.random.default_rng(0)
    checks = []

    # Transform round-trip within 1e-9 relative.
    schema = Schema((Column("a", "numerical"),
                     Column("c", "categorical", ("u", "v")),
                     Column("b", "numerical")))
    values = np.column_stack([rng.normal(size=80) * 3 - 1,
                              rng.integers(0, 2, size=80).astype(float),
                              rng.uniform(0.2, 6.0, size=80)])
    ds = Dataset(schema, values)
    tm = fit_transforms(ds, use_minmax=True, use_boxcox=True)
    back = invert_transforms(tm, apply_transforms(tm, ds))
    num = schema.numerical_indices()
    rel = np.abs(back.values[:, num] - ds.values[:, num]) / np.maximum(
        1e-12, np.abs(ds.values[:, num]))
    checks.append(("round-trip", rel.max() < 1e-9))

    # Box-Cox lambda recovery on lognormal data.
    logn = Dataset(Schema((Column("x", "numerical"),)),
                   np.exp(rng.normal(size=500))[:, None])
    lam = fit_transforms(logn, use_boxcox=True).numeric[0].boxcox[0]
    checks.append(("boxcox-lambda", abs(lam) <= 0.3))

    # Neural gradients vs central finite differences.
    net = mlp_init([3, 5, 2], ["tanh", "linear"], seed=1)
    from lmte.neural import backward, forward

    x = rng.normal(size=(6, 3))
    wm = rng.normal(size=(6, 2))
    _, cache = forward(net, x)
    grads, _ = backward(net, cache, wm)
    flat = [g for pair in grads for g in pair]
    h, k, grad_ok = 1e-5, 0, True
    for layer in net.layers:
        for arr in (layer.weight, layer.bias):
            fd = np.zeros_like(arr)
            a = arr.ravel()
            for i in range(a.size):
                old = a[i]
                a[i] = old + h
                up = (forward(net, x)[0] * wm).sum()
                a[i] = old - h
                dn = (forward(net, x)[0] * wm).sum()
                a[i] = old
                fd.ravel()[i] = (up - dn) / (2 * h)
            grad_ok &= np.allclose(flat[k], fd, rtol=1e-4, atol=1e-7)
            k += 1
    checks.append(("mlp-gradients", grad_ok))

    # Gradient penalty double backprop vs finite differences.
    critic = mlp_init([2, 4, 1], ["tanh", "linear"], seed=2)
    real, fake = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))

    def pen():
        return gradient_penalty(critic, real, fake, np.random.default_rng(9))

    _, gp_grads = pen()
    gp_flat = [g for pair in gp_grads for g in pair]
    k, gp_ok = 0, True
    for layer in critic.layers:
        for arr in (layer.weight, layer.bias):
            fd = np.zeros_like(arr)
            a = arr.ravel()
            for i in range(a.size):
                old = a[i]
                a[i] = old + 1e-6
                up = pen()[0]
                a[i] = old - 1e-6
                dn = pen()[0]
                a[i] = old
                fd.ravel()[i] = (up - dn) / 2e-6
            gp_ok &= np.allclose(gp_flat[k], fd, rtol=1e-3, atol=1e-6)
            k += 1
    checks.append(("gradient-penalty", gp_ok))

    # GMM EM log-likelihood monotone.
    nm = fit_mode_normalizer(np.r_[rng.normal(size=150),
                                   rng.normal(size=150) + 6], k_modes=4)
    checks.append(("em-monotone", bool(np.all(np.diff(nm.loglik_trace) >= -1e-9))))

    # Depth-0 tree equals the flat leaf model, bit for bit.
    X = rng.uniform(-1, 1, size=(120, 2))
    yr = X[:, 0] * 2 + rng.normal(size=120) * 0.1
    t0cfg = LmtConfig("regression", max_depth=0, min_leaf=20)
    tree0 = fit_lmt(X, yr, t0cfg)
    flat = fit_ridge(X, yr, 1e-3)
    checks.append(("depth0-equivalence",
                   bool(np.array_equal(predict(tree0, X), flat.predict(X)))))

    yc = (X[:, 0] + X[:, 1] > 0).astype(float)
    tree0c = fit_lmt(X, yc, LmtConfig("classification", max_depth=0, min_leaf=20))
    flat_c = fit_logistic(X, yc, 1.0)
    checks.append(("depth0-equivalence-clf",
                   bool(np.array_equal(predict(tree0c, X), flat_c.predict(X)))))

    # Greedy split never loses to adaptive.
    yb = np.where(X[:, 0] < 0.2, X[:, 1], -X[:, 1]) + rng.normal(size=120) * 0.05
    g = best_split(X, yb, LmtConfig("regression", max_depth=1, min_leaf=20,
                                    search="greedy"))
    a = best_split(X, yb, LmtConfig("regression", max_depth=1, min_leaf=20,
                                    search="adaptive", n_candidates=6))
    checks.append(("greedy-beats-adaptive", g.total_loss <= a.total_loss))

    # Metrics equal brute force on small instances.
    s = rng.integers(0, 2, size=40).astype(float)
    o = rng.integers(0, 2, size=40).astype(float)
    brute = sum(int(x == y) for x, y in zip(s, o)) / 40
    checks.append(("fidelity-clf-brute", fidelity_classification(s, o) == brute))

    sp = rng.normal(size=40)
    op = rng.normal(size=40)
    rmse = (sum((x - y) ** 2 for x, y in zip(sp, op)) / 40) ** 0.5
    sd = (sum((v - op.mean()) ** 2 for v in op) / 40) ** 0.5
    checks.append(("fidelity-reg-brute",
                   abs(fidelity_regression(sp, op) - rmse / sd) < 1e-12))

    small = Dataset(Schema((Column("a", "numerical"),)),
                    rng.normal(size=50)[:, None])
    rule = RuleConjunction((Condition("a", "<=", 0.3),), 0)
    labels = rng.integers(0, 2, size=50).astype(float)
    leaf = fit_logistic(small.values, labels, 1.0)
    cp = coverage_precision(rule, leaf, labels, small)
    cov_brute = sum(1 for v in small.values[:, 0] if v <= 0.3) / 50
    checks.append(("coverage-brute", abs(cp["coverage"] - cov_brute) < 1e-12))

    vals = {f"f{i}": float(v) for i, v in enumerate(rng.normal(size=9))}
    top = sorted(vals, key=lambda kk: -abs(vals[kk]))[:5]
    truth = set(list(vals)[:4])
    checks.append(("recall-brute",
                   recall_faithfulness(vals, truth)
                   == len(set(top) & truth) / len(truth)))

    # Full-pipeline determinism per seed.
    ds2, y2, _ = make_two_moons(200, seed=9)
    enc2 = apply_transforms(onehot_encoder(ds2.schema), ds2)
    forest = fit_reference_forest(enc2, y2, ForestConfig(n_trees=20, seed=1))
    oracle = ForestOracle(forest, ds2.schema)
    cfg = SessionConfig(task="classification", k=15, n_synthetic=100, seed=8)
    cfg.gan.epochs = 50
    runs = [run_session(ds2, ds2.row(4), oracle, cfg).to_dict() for _ in range(2)]
    checks.append(("pipeline-determinism",
                   json.dumps(runs[0], sort_keys=True)
                   == json.dumps(runs[1], sort_keys=True)))

    elapsed = time.time() - t0
    failed = [name for name, ok in checks if not ok]
    report("property-suite",
           not failed and elapsed <= 300,
           f"{len(checks)} checks, failed={failed or 'none'}, "
           f"runtime={elapsed:.0f}s (<=300s)")


def test_oracle_protocol_conformance(tmp_path):
    """Reference oracle script: handshake, batched predict, error paths."""
    schema = Schema((Column("a", "numerical"), Column("b", "numerical")))
    ds = Dataset(schema, np.array([[1.0, 2.0], [0.25, -0.75], [4.0, 4.0]]))
    checks = []

    oracle = SubprocessOracle([sys.executable, "-m",
                               "lmte.oracles.reference_oracle",
                               "--task", "classification", "--threshold", "1.0"])
    try:
        checks.append(("handshake-task", oracle.task == "classification"))
        preds = oracle.predict(ds)
        probs = oracle.predict_proba(ds)
        checks.append(("batch-preds", list(preds) == [1.0, 0.0, 1.0]))
        checks.append(("probs-range", bool(np.all((probs >= 0) & (probs <= 1)))))
    finally:
        oracle.close()

    from lmte.explain import OracleError

    bad = tmp_path / "bad.py"
    bad.write_text('print("nonsense", flush=True)\n')
    try:
        SubprocessOracle([sys.executable, str(bad)])
        checks.append(("bad-handshake-raises", False))
    except OracleError:
        checks.append(("bad-handshake-raises", True))

    short = tmp_path / "short.py"
    short.write_text(
        "import json, sys\n"
        "print(json.dumps({'protocol': 'lmte-oracle/1', 'task': 'regression'}),"
        " flush=True)\n"
        "for line in sys.stdin:\n"
        "    req = json.loads(line)\n"
        "    print(json.dumps({'id': req['id'], 'preds': [1.0]}), flush=True)\n")
    oracle = SubprocessOracle([sys.executable, str(short)])
    try:
        oracle.predict(ds)
        checks.append(("count-mismatch-raises", False))
    except OracleError:
        checks.append(("count-mismatch-raises", True))
    finally:
        oracle.close()

    failed = [name for name, ok in checks if not ok]
    report("oracle-protocol-conformance", not failed,
           f"{len(checks)} checks, failed={failed or 'none'}")
