"""Dataset export and optional public-dataset download.

fetch_bundled writes every registry dataset as CSV + schema sidecar so the
CLI and service can be pointed at files. fetch_public best-effort downloads
a few small public benchmark CSVs; tests never rely on it.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..tabular import save_csv
from .datasets import dataset_names, load_bundled

PUBLIC_SOURCES = {
    # name -> (url, label column)
    "banknote": (
        "https://archive.ics.uci.edu/ml/machine-learning-databases/00267/"
        "data_banknote_authentication.txt",
        "class",
    ),
}


def fetch_bundled(dest) -> list[Path]:
    """Write every bundled dataset as <name>.csv + <name>.schema.json."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for name in dataset_names():
        ds, y, task = load_bundled(name)
        csv_path = dest / f"{name}.csv"
        labels = [int(v) if task == "classification" else float(v) for v in y]
        save_csv(ds, csv_path, extra_columns={"label": labels})
        schema_path = dest / f"{name}.schema.json"
        with open(schema_path, "w", encoding="utf-8") as fh:
            json.dump(ds.schema.to_dict(), fh, sort_keys=True, indent=2)
        written += [csv_path, schema_path]
    return written


def fetch_public(dest, timeout: float = 30.0) -> list[Path]:
    """Best-effort download of small public CSVs; failures are reported,
    never raised."""
    import httpx

    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (url, label) in PUBLIC_SOURCES.items():
        target = dest / f"{name}.csv"
        try:
            r = httpx.get(url, timeout=timeout, follow_redirects=True)
            r.raise_for_status()
        except Exception as e:  # noqa: BLE001 - downloads are strictly optional
            print(f"skipping {name}: {e}")
            continue
        target.write_bytes(r.content)
        written.append(target)
    return written
