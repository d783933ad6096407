"""Reading and writing datasets, designs, matrices and interval tables.

All files use 1-based row and variable indices; the Python API is 0-based.
Floats are written with ``repr`` so a write/read cycle is exact.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .data_model import BlockDesign, MaskedDataset, build_design
from .mvn_stats import MvnParams

NA = "NA"

INTERVAL_HEADER = [
    "row", "col", "em_value", "lower", "upper", "width",
    "converged_min", "converged_max", "inner_iters_min", "inner_iters_max",
]


def fmt(x) -> str:
    x = float(x)
    return NA if np.isnan(x) else repr(x)


def _parse(s: str) -> float:
    s = s.strip()
    return np.nan if s == NA else float(s)


def default_names(p: int) -> list[str]:
    return [f"x{j + 1}" for j in range(p)]


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(path, dataset: MaskedDataset, names=None):
    names = list(names or default_names(dataset.p))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(names)
        for vals, miss in zip(dataset.values, dataset.missing):
            w.writerow([NA if m else repr(float(v)) for v, m in zip(vals, miss)])


def read_dataset(path) -> tuple[MaskedDataset, list[str]]:
    """Parse a data CSV; ``NA`` marks a missing cell, any other token must be a number."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty data file")
    names, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    p = len(names)
    values = np.empty((len(body), p))
    for i, r in enumerate(body):
        if len(r) != p:
            raise ValueError(f"{path}: row {i + 1} has {len(r)} fields, expected {p}")
        try:
            values[i] = [_parse(s) for s in r]
        except ValueError as err:
            raise ValueError(f"{path}: row {i + 1}: {err}") from None
    missing = np.isnan(values)
    if not np.all(np.isfinite(values[~missing])):
        raise ValueError(f"{path}: non-finite value outside NA cells")
    return MaskedDataset(values, missing), names


def write_design(path, design: BlockDesign):
    doc = {
        "n": design.n,
        "p": design.p,
        "groups": [
            {"rows": (design.block_rows(k) + 1).tolist(), "vars": (design.block_vars(k) + 1).tolist()}
            for k in range(design.K)
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def read_design(path) -> BlockDesign:
    doc = json.loads(Path(path).read_text())
    try:
        n, p, groups = int(doc["n"]), int(doc["p"]), doc["groups"]
        rows = [[int(i) - 1 for i in g["rows"]] for g in groups]
        vars_ = [[int(j) - 1 for j in g["vars"]] for g in groups]
    except (KeyError, TypeError) as err:
        raise ValueError(f"{path}: malformed design file ({err})") from None
    for label, sets in (("row", rows), ("variable", vars_)):
        if any(i < 0 for s in sets for i in s):
            raise IndexError(f"{path}: {label} indices are 1-based")
    return build_design(rows, vars_, n, p)


def write_matrix(path, matrix, names=None):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    names = list(names or default_names(matrix.shape[1]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(names)
        for r in matrix:
            w.writerow([fmt(x) for x in r])


def read_matrix(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header and at least one row")
    return np.array([[_parse(s) for s in r] for r in rows[1:]]), rows[0]


def write_vector(path, vec, names=None):
    write_matrix(path, np.asarray(vec, dtype=float)[None, :], names)


def read_vector(path) -> np.ndarray:
    m, _ = read_matrix(path)
    if m.shape[0] != 1:
        raise ValueError(f"{path}: expected a single row")
    return m[0]


def write_truth(path, truth: MvnParams):
    doc = {"mu": [float(x) for x in truth.mu], "sigma": truth.sigma.sigma.tolist()}
    Path(path).write_text(json.dumps(doc) + "\n")


def read_truth(path) -> tuple[np.ndarray, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    return np.asarray(doc["mu"], dtype=float), np.asarray(doc["sigma"], dtype=float)


def interval_rows(results) -> list[list[str]]:
    out = []
    for r in results:
        cmin, cmax = r.converged
        imin, imax = r.inner_iters
        out.append([
            str(r.row + 1), str(r.col + 1), fmt(r.em_value), fmt(r.lower), fmt(r.upper),
            fmt(r.width), str(cmin).lower(), str(cmax).lower(), str(imin), str(imax),
        ])
    return out


def write_intervals(path, results):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(INTERVAL_HEADER)
        w.writerows(interval_rows(results))


def read_table(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
