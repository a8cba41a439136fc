"""Reference oracle process for protocol round-trip tests.

Speaks the NDJSON protocol on stdin/stdout: it prints the handshake line,
then answers each {"id", "rows"} request with {"id", "preds"} (plus
"probs" in classification mode). Numeric cells are summed per row;
categorical (string) cells are ignored.

    python -m lmte.oracles.reference_oracle --task regression
    python -m lmte.oracles.reference_oracle --task classification --threshold 1.0
"""

import argparse
import json
import math
import sys

PROTOCOL = "lmte-oracle/1"


def row_sum(row):
    return float(sum(c for c in row if not isinstance(c, str)))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--task", choices=["classification", "regression"],
                        default="regression")
    parser.add_argument("--threshold", type=float, default=0.0,
                        help="class 1 iff row sum exceeds this (classification)")
    args = parser.parse_args(argv)

    print(json.dumps({"protocol": PROTOCOL, "task": args.task}), flush=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        sums = [row_sum(r) for r in req["rows"]]
        if args.task == "classification":
            preds = [1.0 if s > args.threshold else 0.0 for s in sums]
            probs = [1.0 / (1.0 + math.exp(-(s - args.threshold))) for s in sums]
            resp = {"id": req["id"], "preds": preds, "probs": probs}
        else:
            resp = {"id": req["id"], "preds": sums}
        print(json.dumps(resp), flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
