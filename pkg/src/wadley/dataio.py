"""CSV ingestion: response/covariate column selection and factor expansion
for ANOVA-style dose designs."""

import csv
from importlib import resources

import numpy as np

from .model import Dataset


class InputError(Exception):
    """Malformed input file or design specification."""


def mbovis_path():
    """Filesystem path of the bundled M. bovis cell-survival dataset."""
    return resources.files("wadley.data").joinpath("mbovis.csv")


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                raise InputError(f"{path}: empty data row at line {lineno}")
            if len(row) != len(header):
                raise InputError(
                    f"{path}: line {lineno} has {len(row)} cells, expected {len(header)}"
                )
            rows.append([c.strip() for c in row])
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, rows


def _column(header, rows, name, path):
    try:
        idx = header.index(name)
    except ValueError:
        raise InputError(f"{path}: missing column {name!r}") from None
    return [row[idx] for row in rows]


def expand_factor(values, reference):
    """Indicator columns for each non-reference level, in order of first
    appearance; reference rows are all-zero."""
    levels = []
    for v in values:
        if v != reference and v not in levels:
            levels.append(v)
    if reference not in values:
        raise InputError(f"reference level {reference!r} not present in the factor column")
    x = np.zeros((len(values), len(levels)))
    for i, v in enumerate(values):
        if v != reference:
            x[i, levels.index(v)] = 1.0
    return x, levels


def load_dataset(path, response="y", covariates=None, factor=None, reference=None):
    """Parse a header CSV into a Dataset.

    Either `covariates` (numeric column names, passed through) or `factor`
    (a categorical column expanded to indicators against `reference`) must
    describe the design.
    """
    header, rows = _read_csv(path)
    raw_y = _column(header, rows, response, path)
    y = []
    for lineno, cell in enumerate(raw_y, start=2):
        try:
            v = int(cell)
        except ValueError:
            raise InputError(
                f"{path}: line {lineno}, column {response!r}: "
                f"non-integer response {cell!r}"
            ) from None
        if v < 0:
            raise InputError(
                f"{path}: line {lineno}, column {response!r}: negative response"
            )
        y.append(v)

    if factor is not None:
        if reference is None:
            raise InputError("--factor requires --reference")
        values = _column(header, rows, factor, path)
        x, names = expand_factor(values, reference)
        labels = values
    else:
        if not covariates:
            covariates = [h for h in header if h != response]
        if not covariates:
            raise InputError(f"{path}: no covariate columns")
        cols = []
        for name in covariates:
            raw = _column(header, rows, name, path)
            col = []
            for lineno, cell in enumerate(raw, start=2):
                try:
                    col.append(float(cell))
                except ValueError:
                    raise InputError(
                        f"{path}: line {lineno}, column {name!r}: "
                        f"unparseable cell {cell!r}"
                    ) from None
            cols.append(col)
        x = np.column_stack(cols)
        names = list(covariates)
        labels = None
    return Dataset(np.asarray(y), x, labels), names
