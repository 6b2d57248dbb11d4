"""Dataset ingestion, the 1-D toy problem, and train-split standardization."""
from dataclasses import dataclass
import csv

import numpy as np

from .exceptions import EmptyDataset, ParseError
from .numkernel import make_rng

__all__ = [
    "DatasetSplit",
    "toy_function",
    "TOY_NOISE_VARIANCE",
    "generate_toy",
    "load_csv",
    "split_and_standardize",
    "write_csv",
]

TOY_NOISE_VARIANCE = float(np.exp(-2.0))


@dataclass
class DatasetSplit:
    """Standardized train/test arrays plus the statistics used to produce them.

    Features are always standardized. Regression targets are too; for
    classification ``y`` holds one-hot rows and the target statistics are
    identity (mean 0, std 1).
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    task: str = "regression"

    @property
    def train(self):
        return self.x_train, self.y_train

    @property
    def test(self):
        return self.x_test, self.y_test

    def unstandardize_y(self, y):
        return np.asarray(y) * self.y_std + self.y_mean


def toy_function(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sin(x) + np.sin(x / 2) + np.sin(x / 3) - np.sin(x / 4)


def _stats(a):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def split_and_standardize(x, y, test_fraction, rng, task="regression"):
    """Seeded permutation split; statistics come from the training rows only."""
    n = x.shape[0]
    if n == 0:
        raise EmptyDataset("dataset has no rows")
    n_test = int(round(n * test_fraction))
    if n >= 2:
        n_test = min(max(n_test, 1), n - 1)
    perm = rng.permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    x_tr, x_te = x[train_idx], x[test_idx]
    y_tr, y_te = y[train_idx], y[test_idx]
    x_mean, x_std = _stats(x_tr)
    if task == "regression":
        y_mean, y_std = _stats(y_tr)
    else:
        y_mean, y_std = np.zeros(y.shape[1]), np.ones(y.shape[1])
    return DatasetSplit(
        (x_tr - x_mean) / x_std, (y_tr - y_mean) / y_std,
        (x_te - x_mean) / x_std, (y_te - y_mean) / y_std,
        x_mean, x_std, y_mean, y_std, task)


def generate_toy(n=1000, seed=0, noiseless=False, train_fraction=0.8, return_raw=False):
    """Noisy samples of ``sin(x) + sin(x/2) + sin(x/3) - sin(x/4)`` on ``[-10, 10]``.

    The noise variance is ``exp(-2)``. Returns a standardized 80/20
    :class:`DatasetSplit`, or the raw ``(x, y)`` columns with ``return_raw``.
    """
    if n < 2:
        raise ValueError("toy dataset needs n >= 2")
    rng = make_rng(seed, 0)
    x = rng.uniform(-10.0, 10.0, size=(n, 1))
    y = toy_function(x)
    if not noiseless:
        y = y + np.sqrt(TOY_NOISE_VARIANCE) * rng.standard_normal((n, 1))
    if return_raw:
        return x, y
    return split_and_standardize(x, y, 1.0 - train_fraction, make_rng(seed, 1))


def _parse_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        header = [h.strip() for h in header]
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", row=r)
            values = []
            for name, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=r, column=name) from None
            rows.append(values)
    if not rows:
        raise EmptyDataset(f"{path} has a header but no data rows")
    table = np.array(rows)
    if not np.all(np.isfinite(table)):
        r, c = np.argwhere(~np.isfinite(table))[0]
        raise ParseError("non-finite value", row=int(r) + 2, column=header[c])
    return header, table


def load_csv(path, task="regression", label_columns=1, test_fraction=0.1, seed=0):
    """Read a numeric CSV with a header row; the last ``label_columns`` are targets.

    For classification the single last column holds integer class labels,
    which are expanded to one-hot rows of width ``max(label) + 1``.
    """
    header, table = _parse_rows(path)
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    if task == "classification":
        label_columns = 1
    if not 1 <= label_columns < table.shape[1]:
        raise ParseError(f"cannot take {label_columns} label columns from "
                         f"{table.shape[1]} columns")
    x, y = table[:, :-label_columns], table[:, -label_columns:]
    if task == "classification":
        labels = y[:, 0]
        ints = labels.astype(int)
        bad = (ints != labels) | (ints < 0)
        if np.any(bad):
            r = int(np.argmax(bad))
            raise ParseError(f"class label {labels[r]!r} is not a non-negative integer",
                             row=r + 2, column=header[-1])
        y = np.eye(ints.max() + 1)[ints]
    return split_and_standardize(x, y, test_fraction, make_rng(seed, 1), task)


def write_csv(path, x, y, header=None):
    x, y = np.atleast_2d(x), np.asarray(y)
    y = y[:, None] if y.ndim == 1 else y
    if header is None:
        header = [f"x{i}" for i in range(x.shape[1])] + [f"y{i}" for i in range(y.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.hstack([x, y]):
            writer.writerow([repr(float(v)) for v in row])
