"""
Dataset ingestion and synthetic generation for the three models.

Every loader returns plain arrays and rejects malformed or non-finite rows
with the offending (1-based, header excluded) row number.
"""

import csv
import os

import numpy as np

from .models.logistic import logit_simulate
from .models.random_effects import re_simulate
from .models.stochastic_volatility import log_returns, sv_simulate

HIGGS_ROWS = 110_000
HIGGS_COVARIATES = 21


class DataError(ValueError):
    pass


def _read_rows(path, n_cols, max_rows=None, skip_cols=0):
    """Read numeric rows with exactly ``n_cols`` fields after ``skip_cols``."""
    if not os.path.exists(path):
        raise DataError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise DataError(f"{path}: file is empty")
        rows = []
        header = _is_header(first)
        pending = [] if header else [first]
        for lineno, row in enumerate(_chain(pending, reader), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            fields = row[skip_cols:]
            if len(fields) < n_cols:
                raise DataError(f"{path}: row {lineno} has {len(fields)} numeric fields, "
                                f"expected {n_cols}")
            try:
                values = [float(f) for f in fields[:n_cols]]
            except ValueError:
                raise DataError(f"{path}: row {lineno} is not numeric") from None
            if not all(np.isfinite(values)):
                raise DataError(f"{path}: row {lineno} contains NaN or infinite values")
            rows.append(values)
            if max_rows is not None and len(rows) >= max_rows:
                break
    if not rows:
        raise DataError(f"{path}: dataset is empty")
    return np.array(rows)


def _chain(first, rest):
    yield from first
    yield from rest


def _is_header(row):
    try:
        [float(f) for f in row if f.strip()]
    except ValueError:
        return True
    return False


def load_higgs(path, n_rows=HIGGS_ROWS, n_covariates=HIGGS_COVARIATES):
    """Label in the first column, covariates next; an intercept column is prepended."""
    data = _read_rows(path, 1 + n_covariates, max_rows=n_rows)
    y = data[:, 0]
    if not np.all((y == 0) | (y == 1)):
        bad = int(np.flatnonzero((y != 0) & (y != 1))[0]) + 1
        raise DataError(f"{path}: row {bad} has a label other than 0 or 1")
    X = np.column_stack([np.ones(len(y)), data[:, 1:]])
    return y, X


def load_prices(path):
    """``date,price`` rows; returns the prices."""
    prices = _read_rows(path, 1, skip_cols=1)[:, 0]
    if np.any(prices <= 0):
        bad = int(np.flatnonzero(prices <= 0)[0]) + 1
        raise DataError(f"{path}: row {bad} has a non-positive price")
    return prices


def load_bitcoin(path):
    prices = load_prices(path)
    if prices.size < 2:
        raise DataError(f"{path}: need at least two prices to form a return")
    return log_returns(prices)


def load_series(path):
    """Single-column observations, as written by :func:`write_series`."""
    return _read_rows(path, 1)[:, 0]


def write_series(path, y, name="y"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([name])
        writer.writerows([[f"{v:.17g}"] for v in y])


def write_logistic(path, y, X):
    """Higgs layout: label then covariates (the intercept column is dropped)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", *(f"x{j}" for j in range(1, X.shape[1]))])
        for label, row in zip(y, X[:, 1:]):
            writer.writerow([int(label), *(f"{v:.17g}" for v in row)])


def write_prices(path, returns, start_price=100.0):
    """Price series whose log-returns (in percent) are ``returns``."""
    prices = start_price * np.exp(np.concatenate([[0.0], np.cumsum(returns) / 100.0]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "price"])
        for t, p in enumerate(prices):
            writer.writerow([f"day{t}", f"{p:.17g}"])


def synthetic_beta(p, seed, scale=0.1):
    """Regression coefficients for synthetic logistic data.

    The default scale gives a weak signal, so that the log-likelihood of a
    sub-sample varies little between observations.
    """
    return scale * np.random.default_rng(seed).standard_normal(p)


def generate(model, spec, seed):
    """Simulate a dataset for ``model`` from the settings in ``spec``."""
    if model == "random_effects":
        return re_simulate(spec.get("T", 100), spec.get("mu", 1.0), spec.get("sigma", 0.2), seed)
    if model == "logistic":
        p = spec.get("p", HIGGS_COVARIATES + 1)
        if "beta" in spec:
            beta = np.asarray(spec["beta"], dtype=float)
        else:
            beta = synthetic_beta(p, seed, spec.get("beta_scale", 0.1))
        return logit_simulate(spec.get("T", 20_000), beta, seed)
    if model == "stochastic_volatility":
        params = spec.get("params", [0.5, 0.95, 0.2, -0.3])
        return sv_simulate(spec.get("T", 500), params, seed)[1]
    if model == "gaussian":
        return None
    raise DataError(f"no generator for model {model!r}")


def write_dataset(model, data, path):
    if model == "logistic":
        write_logistic(path, *data)
    elif model == "stochastic_volatility":
        write_prices(path, data)
    else:
        write_series(path, data)


def read_dataset(model, path, spec=None):
    spec = spec or {}
    if model == "logistic":
        return load_higgs(path, spec.get("rows", HIGGS_ROWS),
                          spec.get("covariates", HIGGS_COVARIATES))
    if model == "stochastic_volatility":
        return load_bitcoin(path)
    return load_series(path)
