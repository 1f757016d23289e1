"""Deterministic table emission (CSV or JSON) for the CLI commands.

Floats are written with shortest round-trip representation so reruns of an
identical configuration produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _format(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path: Path, columns, rows, fmt: str = "csv") -> Path:
    """Write rows under the given columns; returns the path actually written."""
    path = Path(path)
    rows = [tuple(row) for row in rows]
    if fmt == "csv":
        out = path.with_suffix(".csv")
        with open(out, "w") as stream:
            stream.write(",".join(columns) + "\n")
            for row in rows:
                stream.write(",".join(_format(v) for v in row) + "\n")
        return out
    if fmt == "json":
        out = path.with_suffix(".json")
        payload = [
            {col: (float(v) if isinstance(v, (float, np.floating)) else
                   int(v) if isinstance(v, (int, np.integer)) else str(v))
             for col, v in zip(columns, row)}
            for row in rows
        ]
        with open(out, "w") as stream:
            json.dump(payload, stream, indent=1)
            stream.write("\n")
        return out
    raise ValueError(f"unknown output format {fmt!r}")
