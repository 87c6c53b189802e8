"""Sparse triplet + JSON-header interchange files.

A constraint system or full QP is stored as a JSON header plus CSV side
files.  Matrices are ``row,col,value`` triplets; vectors are ``index,value``
pairs; bound vectors are ``row,lower,upper``.  Values are written with
``repr`` so a load/save cycle reproduces every float bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def write_triplets(path, mat) -> None:
    mat = sp.coo_matrix(mat)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        for r, c, v in zip(mat.row, mat.col, mat.data):
            writer.writerow([int(r), int(c), _fmt(v)])


def read_triplets(path, shape) -> sp.csc_matrix:
    rows, cols, vals = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for r, c, v in reader:
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsc()


def write_bounds(path, lower, upper) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "lower", "upper"])
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            writer.writerow([i, _fmt(lo), _fmt(hi)])


def read_bounds(path, n_rows):
    lower = np.empty(n_rows)
    upper = np.empty(n_rows)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for i, lo, hi in reader:
            lower[int(i)] = float(lo)
            upper[int(i)] = float(hi)
    return lower, upper


def write_vector(path, vec) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "value"])
        for i, v in enumerate(vec):
            writer.writerow([i, _fmt(v)])


def read_vector(path, n) -> np.ndarray:
    out = np.empty(n)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for i, v in reader:
            out[int(i)] = float(v)
    return out


def write_header(path, header: dict) -> None:
    Path(path).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def read_header(path) -> dict:
    return json.loads(Path(path).read_text())
