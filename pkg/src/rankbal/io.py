"""CSV and JSON serialization of paths.

Scaled queue paths use the columns ``t, i, X, Xhat_or_Xcheck, Lhat, E, A,
D, T`` and SDE paths ``t, i, X, L, beta``; one row per grid point and
server, server labels 1-based.  Floats are written with ``repr`` so files
are byte-reproducible.  Each CSV has a JSON sidecar next to it.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import ModelParams
from .queue import ScaledPath
from .sde import SdePath
from .stats import _plain

SCALED_COLUMNS = ("t", "i", "X", "Xhat_or_Xcheck", "Lhat", "E", "A", "D", "T")
SDE_COLUMNS = ("t", "i", "X", "L", "beta")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_json(path, doc: dict):
    Path(path).write_text(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")


def write_scaled_path(path, sp: ScaledPath, mp: ModelParams, seed: int, horizon: float):
    path = Path(path)
    rows = []
    for k, t in enumerate(sp.grid):
        for i in range(sp.N):
            rows.append(
                (
                    _fmt(t), i + 1, int(sp.raw_x[k, i]), _fmt(sp.X[k, i]), _fmt(sp.L[k, i]),
                    int(sp.raw_E[k, i]), int(sp.raw_A[k, i]), int(sp.raw_D[k, i]), _fmt(sp.raw_busy[k, i]),
                )
            )
    _write_rows(path, SCALED_COLUMNS, rows)
    write_json(
        path.with_suffix(".json"),
        {
            "kind": "scaled-path",
            "columns": list(SCALED_COLUMNS),
            "regime": sp.regime,
            "alpha_n": sp.alpha_n,
            "params": mp.to_dict(),
            "seed": seed,
            "horizon": horizon,
        },
    )


def read_scaled_csv(path) -> dict:
    """Columns of a scaled-path CSV as arrays."""
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        cols = {c: [] for c in r.fieldnames}
        for row in r:
            for c in cols:
                cols[c].append(row[c])
    ints = {"i", "X", "E", "A", "D"}
    return {c: np.array(v, dtype=np.int64 if c in ints else float) for c, v in cols.items()}


def write_sde_path(path, sp: SdePath):
    path = Path(path)
    rows = []
    K = sp.beta.shape[0]
    for k, t in enumerate(sp.grid):
        for i in range(sp.N):
            beta = _fmt(sp.beta[k, i]) if k < K else ""
            rows.append((_fmt(t), i + 1, _fmt(sp.X[k, i]), _fmt(sp.L[k, i]), beta))
    _write_rows(path, SDE_COLUMNS, rows)
    write_json(
        path.with_suffix(".json"),
        {
            "kind": "sde-path",
            "columns": list(SDE_COLUMNS),
            "params": sp.dp.to_dict(),
            "dt": sp.dt,
            "seed": sp.seed,
            "reflected": sp.reflected,
            "tie_rule": str(sp.tie_rule),
        },
    )


def write_samples(path, header, rows):
    """Plain per-replication table (one row per replication)."""
    _write_rows(Path(path), header, [[_fmt(v) for v in row] for row in rows])
