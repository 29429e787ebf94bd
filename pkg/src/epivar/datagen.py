"""Synthetic regression distributions and CSV ingestion.

Families
--------
``sin-sum``
    ``X ~ Unif([0, 0.2]^d)``, ``Y = sum_i sin(X_i) + N(0, 0.1^2)``.
``exp-quad``
    ``X ~ N(0, 0.1^2 I_d)``, ``Y = sum_i exp(X_i) + X_i^2 + N(0, (0.1 d)^2)``.
``cos-cubic``
    ``X ~ N(0, 0.1^2 I_d)``, ``Y = sum_i cos(X_i) + X_i^3 + N(0, (0.1 d)^2)``.

The synthetic test point is ``(0.1, ..., 0.1)``; for tabular data it is the
column-wise mean of the inputs.
"""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _random
from ._validation import as_matrix, as_vector, check_positive_int
from .exceptions import InputError, ParseError

__all__ = [
    "FAMILIES",
    "SyntheticSpec",
    "Dataset",
    "sample",
    "conditional_mean",
    "noise_std",
    "test_point",
    "load_csv",
    "write_csv",
]

FAMILIES = ("sin-sum", "exp-quad", "cos-cubic")


@dataclass(frozen=True)
class SyntheticSpec:
    family: str = "sin-sum"
    dim: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown synthetic family {self.family!r}; expected one of {FAMILIES}")
        check_positive_int(self.dim, "dim")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        X = as_matrix(self.inputs, "inputs")
        y = as_vector(self.labels, "labels")
        if y.shape[0] != X.shape[0]:
            raise InputError(f"{X.shape[0]} input rows but {y.shape[0]} labels")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, index, **provenance):
        index = np.asarray(index)
        prov = dict(self.provenance)
        prov.update(provenance)
        return Dataset(self.inputs[index], self.labels[index], prov)


def conditional_mean(spec, X):
    """``E[Y | X]`` for a synthetic family, row-wise."""
    X = np.asarray(X, dtype=np.float64)
    if spec.family == "sin-sum":
        return np.sin(X).sum(axis=-1)
    if spec.family == "exp-quad":
        return (np.exp(X) + X**2).sum(axis=-1)
    return (np.cos(X) + X**3).sum(axis=-1)


def noise_std(spec):
    return 0.1 if spec.family == "sin-sum" else 0.1 * spec.dim


def sample(spec, n, seed):
    """Draw ``n`` i.i.d. pairs from ``spec``; deterministic in ``seed``."""
    n = check_positive_int(n, "n")
    gen = _random.rng(seed)
    if spec.family == "sin-sum":
        X = gen.uniform(0.0, 0.2, size=(n, spec.dim))
    else:
        X = gen.normal(0.0, 0.1, size=(n, spec.dim))
    y = conditional_mean(spec, X) + gen.normal(0.0, noise_std(spec), size=n)
    return Dataset(X, y, {"source": "synthetic", "family": spec.family, "dim": spec.dim, "seed": int(seed)})


def test_point(spec_or_data):
    """Fixed evaluation point: 0.1 in every coordinate, or the input column means."""
    if isinstance(spec_or_data, SyntheticSpec):
        return np.full(spec_or_data.dim, 0.1)
    if isinstance(spec_or_data, Dataset):
        return spec_or_data.inputs.mean(axis=0)
    raise InputError(f"expected SyntheticSpec or Dataset, got {type(spec_or_data).__name__}")


def _parse_float(cell, row, col):
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite cell {cell!r} at row {row}, column {col}")
    return value


def _is_header(cells):
    try:
        for c in cells:
            float(c)
    except ValueError:
        return True
    return False


def load_csv(path, label_column=-1, standardize=True):
    """Read a numeric CSV into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
    label_column : str or int
        Header name, or zero-based column index (negative counts from the end).
    standardize : bool
        Z-score every input column and the labels; the means and standard
        deviations are stored in ``provenance["transform"]``.

    Raises
    ------
    ParseError
        Empty file, ragged rows, non-numeric cells or an unknown label column.
        Row numbers in messages are 1-based file lines.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = None
    first_line = 1
    if _is_header(rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_line = 2
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(header) if header is not None else len(rows[0])

    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None or label_column not in header:
            raise ParseError(f"{path}: label column {label_column!r} not found")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if not -width <= label_idx < width:
            raise ParseError(f"{path}: label column {label_column!r} out of range for {width} columns")
        label_idx %= width

    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = first_line + i
        if len(row) != width:
            raise ParseError(f"{path}: row {line} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            values[i, j] = _parse_float(cell.strip(), line, j)

    y = values[:, label_idx]
    X = np.delete(values, label_idx, axis=1)
    if X.shape[1] == 0:
        raise ParseError(f"{path}: no input columns besides the label")
    columns = header or [str(j) for j in range(width)]
    provenance = {
        "source": "csv",
        "path": str(path),
        "label_column": columns[label_idx],
        "input_columns": [c for j, c in enumerate(columns) if j != label_idx],
        "standardized": bool(standardize),
    }
    if standardize:
        x_mean, x_std = X.mean(axis=0), X.std(axis=0)
        y_mean, y_std = float(y.mean()), float(y.std())
        x_std = np.where(x_std > 0, x_std, 1.0)
        y_std = y_std if y_std > 0 else 1.0
        X = (X - x_mean) / x_std
        y = (y - y_mean) / y_std
        provenance["transform"] = {
            "input_mean": x_mean.tolist(),
            "input_std": x_std.tolist(),
            "label_mean": y_mean,
            "label_std": y_std,
        }
    return Dataset(X, y, provenance)


def write_csv(dataset, path, label_name="y"):
    """Write inputs then label with a header; floats use shortest round-trip repr."""
    path = Path(path)
    names = [f"x{j}" for j in range(dataset.dim)] + [label_name]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for xi, yi in zip(dataset.inputs, dataset.labels):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    return path
