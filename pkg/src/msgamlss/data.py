"""CSV ingestion and tabular output helpers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from msgamlss.errors import DataError


@dataclass
class Dataset:
    """Time-ordered response ``y`` (length ``T``) and covariates ``X`` (``T x P``)."""

    y: np.ndarray
    X: np.ndarray
    names: list[str]

    @property
    def T(self) -> int:
        return len(self.y)

    @property
    def P(self) -> int:
        return self.X.shape[1]


def ingest_csv(path) -> Dataset:
    """Read a header + numeric CSV; column 1 is the response, the rest covariates."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise DataError(f"{path}: need a response column and at least one covariate")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            values = []
            for col, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    raise DataError(f"{path}: missing value at row {lineno}, column {col + 1} ({header[col]})")
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {col + 1} ({header[col]})"
                    ) from None
            rows.append(values)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two observations, found {len(rows)}")
    table = np.array(rows, dtype=float)
    return Dataset(table[:, 0], table[:, 1:], header)


def write_dataset(path, y, X, names=None) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    names = names or ["y"] + [f"x{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for yt, xt in zip(y, X):
            w.writerow([repr(float(yt))] + [repr(float(v)) for v in xt])


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
