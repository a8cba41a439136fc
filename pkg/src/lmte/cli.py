"""Command-line entry point.

Subcommands: explain (full pipeline for one point), whatif (saved session
or live service), sample (emit a synthetic neighborhood CSV), eval (run an
experiment config), serve (start the HTTP service), fetch-data (write
bundled datasets, optionally download public ones).

A shared JSON config file may carry "session", "oracle", and "experiment"
sections; command-line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .explain import (
    SessionConfig,
    make_oracle,
    run_session,
    session_snapshot_load,
    session_snapshot_save,
    top_attributions,
    what_if,
)
from .tabular import Dataset, Schema, load_csv, row_from_named, save_csv


class UsageError(Exception):
    """Bad invocation: maps to exit code 2."""


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON: {e}") from None


def _load_config_file(args) -> dict:
    return _read_json(args.config) if getattr(args, "config", None) else {}


def _emit(args, payload: dict, text: str | None = None) -> None:
    if args.format == "json":
        out = json.dumps(payload, sort_keys=True, indent=2)
    else:
        out = text if text is not None else json.dumps(payload, sort_keys=True,
                                                       indent=2)
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    else:
        print(out)


def _oracle_spec(args, cfg_file: dict) -> dict:
    raw = getattr(args, "oracle", None)
    if raw:
        if raw.lstrip().startswith("{"):
            try:
                return json.loads(raw)
            except json.JSONDecodeError as e:
                raise UsageError(f"--oracle inline JSON invalid: {e}") from None
        return _read_json(raw)
    if "oracle" in cfg_file:
        return cfg_file["oracle"]
    raise UsageError("no oracle spec: pass --oracle FILE|JSON or a config file")


def _session_config(args, cfg_file: dict) -> SessionConfig:
    section = dict(cfg_file.get("session", {}))
    if getattr(args, "task", None):
        section["task"] = args.task
    if getattr(args, "k", None) is not None:
        section["k"] = args.k
    if getattr(args, "n_synthetic", None) is not None:
        section["n_synthetic"] = args.n_synthetic
    if getattr(args, "epochs", None) is not None:
        section.setdefault("gan", {})["epochs"] = args.epochs
    if getattr(args, "use_minmax", False):
        section["use_minmax"] = True
    if getattr(args, "use_boxcox", False):
        section["use_boxcox"] = True
    if args.seed is not None:
        section["seed"] = args.seed
    if "task" in section and "lmt" in section:
        section["lmt"].setdefault("task", section["task"])
    return SessionConfig.from_dict(section)


def _load_train(args) -> Dataset:
    schema = None
    if getattr(args, "schema", None):
        schema = Schema.from_dict(_read_json(args.schema))
    train = load_csv(args.train, schema)
    label = getattr(args, "label_column", None)
    if label and label in train.schema.names:
        li = train.schema.column_index(label)
        keep = [j for j in range(len(train.schema.columns)) if j != li]
        feat_schema = Schema(tuple(train.schema.columns[j] for j in keep))
        train = Dataset(feat_schema, train.values[:, keep])
    return train


def _load_point(args, schema: Schema) -> np.ndarray:
    point = _read_json(args.point)
    if not isinstance(point, dict):
        raise UsageError("test-point file must hold a {feature: value} object")
    return row_from_named(schema, point)


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects feature=value, got {pair!r}")
        key, _, value = pair.partition("=")
        try:
            out[key] = float(value)
        except ValueError:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_explain(args) -> int:
    cfg_file = _load_config_file(args)
    train = _load_train(args)
    x_t = _load_point(args, train.schema)
    oracle = make_oracle(_oracle_spec(args, cfg_file), train.schema)
    config = _session_config(args, cfg_file)
    try:
        session = run_session(train, x_t, oracle, config)
    finally:
        oracle.close()
    if args.save_session:
        session_snapshot_save(session, args.save_session)
    expl = session.explanation
    payload = expl.to_dict()
    payload["top_attributions"] = [a.to_dict()
                                   for a in top_attributions(expl, args.top_k)]
    _emit(args, payload, expl.render_text(args.top_k))
    return 0


def cmd_whatif(args) -> int:
    overrides = _parse_overrides(args.set or [])
    if args.url:
        import httpx

        try:
            r = httpx.post(
                f"{args.url.rstrip('/')}/sessions/{args.session_id}/whatif",
                json={"overrides": overrides}, timeout=60.0)
            body = r.json()
            if r.status_code != 200:
                raise RuntimeError(body.get("error", {}).get("message", r.text))
        except httpx.HTTPError as e:
            raise RuntimeError(f"service unreachable: {e}") from e
        _emit(args, body)
        return 0
    if not args.session:
        raise UsageError("pass --session SNAPSHOT.json or --url/--session-id")
    snap = session_snapshot_load(args.session)
    result = what_if(snap.tree, snap.schema, snap.test_point, overrides,
                     fidelity=snap.fidelity)
    payload = result.explanation.to_dict()
    payload["leaf_changed"] = result.leaf_changed
    payload["overridden"] = result.overridden
    payload["top_attributions"] = [
        a.to_dict() for a in top_attributions(result.explanation, args.top_k)]
    text = result.explanation.render_text(args.top_k) \
        + f"\nleaf changed: {result.leaf_changed}"
    _emit(args, payload, text)
    return 0


def cmd_sample(args) -> int:
    from .explain import generate_neighborhood

    cfg_file = _load_config_file(args)
    train = _load_train(args)
    x_t = _load_point(args, train.schema)
    oracle = make_oracle(_oracle_spec(args, cfg_file), train.schema)
    config = _session_config(args, cfg_file)
    try:
        neigh = generate_neighborhood(train, x_t, oracle, config)
    finally:
        oracle.close()
    dest = args.out or "neighborhood.csv"
    save_csv(neigh.rows, dest, extra_columns={"label": list(neigh.labels)})
    meta = {"rows_csv": str(dest), "provenance": neigh.provenance}
    if args.format == "json":
        print(json.dumps(meta, sort_keys=True))
    else:
        print(f"wrote {neigh.n_rows} labeled rows to {dest}")
    return 0


def cmd_eval(args) -> int:
    from .evalkit.experiments import run_experiment

    cfg_file = _load_config_file(args)
    exp_cfg = cfg_file.get("experiment", cfg_file)
    if not exp_cfg.get("experiment"):
        raise UsageError("experiment config must name an \"experiment\"")
    if args.seed is not None:
        exp_cfg["seed"] = args.seed
    exp_cfg.setdefault("jobs", args.jobs)
    report = run_experiment(exp_cfg)
    _emit(args, report.to_dict(), report.render_text())
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(host=args.host, port=args.port, static_dir=args.static_dir)
    return 0


def cmd_fetch_data(args) -> int:
    from .evalkit.fetch import fetch_bundled, fetch_public

    written = fetch_bundled(args.dest)
    if args.source == "public":
        written += fetch_public(args.dest)
    _emit(args, {"written": [str(p) for p in written]},
          "\n".join(str(p) for p in written))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmte",
        description="Local explanations from GAN-sampled neighborhoods "
                    "and linear model tree surrogates.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="shared JSON config file")
    common.add_argument("--out", help="write output to this path")
    common.add_argument("--format", choices=["json", "text"], default="text")

    pipeline = argparse.ArgumentParser(add_help=False)
    pipeline.add_argument("--train", required=True, help="training CSV")
    pipeline.add_argument("--schema", help="schema sidecar JSON")
    pipeline.add_argument("--label-column", default="label",
                          help="label column to drop from features")
    pipeline.add_argument("--oracle", help="oracle spec file or inline JSON")
    pipeline.add_argument("--point", required=True, help="test point JSON file")
    pipeline.add_argument("--task", choices=["classification", "regression"])
    pipeline.add_argument("--k", type=int, help="nearest neighbors")
    pipeline.add_argument("--n-synthetic", type=int, dest="n_synthetic")
    pipeline.add_argument("--epochs", type=int, help="GAN training epochs")
    pipeline.add_argument("--use-minmax", action="store_true")
    pipeline.add_argument("--use-boxcox", action="store_true")

    p = sub.add_parser("explain", parents=[common, pipeline],
                       help="explain one prediction end to end")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--save-session", help="write a session snapshot JSON")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("whatif", parents=[common],
                       help="re-route a modified point through a saved session")
    p.add_argument("--session", help="session snapshot JSON")
    p.add_argument("--url", help="base URL of a running service")
    p.add_argument("--session-id", help="service session id (with --url)")
    p.add_argument("--set", action="append", metavar="FEATURE=VALUE")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(fn=cmd_whatif)

    p = sub.add_parser("sample", parents=[common, pipeline],
                       help="emit a labeled synthetic neighborhood CSV")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", parents=[common],
                       help="run an experiment config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--static-dir", help="serve a built UI from this directory")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("fetch-data", parents=[common],
                       help="write bundled datasets (and optionally fetch "
                            "public ones) as CSV + schema sidecars")
    p.add_argument("--dest", required=True)
    p.add_argument("--source", choices=["bundled", "public"], default="bundled")
    p.set_defaults(fn=cmd_fetch_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.fn(args)
    except UsageError as e:
        _print_error(args, str(e), usage=parser.format_usage())
        return 2
    except (ValueError, RuntimeError, OSError) as e:
        _print_error(args, str(e))
        return 1
    except KeyboardInterrupt:
        return 130


def _print_error(args, message: str, usage: str | None = None) -> None:
    if getattr(args, "format", "text") == "json":
        print(json.dumps({"error": message}), file=sys.stderr)
    else:
        if usage:
            print(usage.rstrip(), file=sys.stderr)
        print(f"error: {message}", file=sys.stderr)


if __name__ == "__main__":
    raise SystemExit(main())
