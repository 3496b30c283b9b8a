"""Data ingestion and the built-in telephone-fault dataset."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .density import Sample
from .errors import DataError

# ordered differences of inverse fault rates, test minus control, 14 matched pairs
TELEPHONE_FAULT = (-988, -135, -78, 3, 59, 83, 93, 110, 189, 197, 204, 229, 289, 310)

BUILTINS = {"telephone-fault": TELEPHONE_FAULT}


def builtin(name):
    try:
        return Sample(np.array(BUILTINS[name], dtype=float))
    except KeyError:
        raise DataError(f"unknown builtin dataset {name!r}; known: {', '.join(BUILTINS)}") from None


def ingest_csv(path):
    """Read a single numeric column; a non-numeric first row is taken as a header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    values = []
    with path.open(newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            if len(cells) > 1:
                raise DataError(f"row {row_no}: expected one column, found {len(cells)}")
            try:
                values.append(float(cells[0]))
            except ValueError:
                if row_no == 1:
                    continue
                raise DataError(f"row {row_no}: cannot parse {cells[0]!r} as a number") from None
    if not values:
        raise DataError(f"{path} contains no data")
    return Sample(np.array(values))


def load(source):
    """``builtin:<name>`` or a CSV path."""
    if source.startswith("builtin:"):
        return builtin(source.split(":", 1)[1])
    return ingest_csv(source)


def drop(sample, indices):
    """Remove 1-based positions from a sample."""
    idx = sorted({int(i) for i in indices})
    if any(i < 1 or i > sample.n for i in idx):
        raise DataError(f"drop index out of range 1..{sample.n}")
    keep = np.ones(sample.n, bool)
    keep[[i - 1 for i in idx]] = False
    if not keep.any():
        raise DataError("dropping every observation leaves nothing to fit")
    return Sample(sample.values[keep])
