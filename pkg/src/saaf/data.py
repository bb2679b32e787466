"""Datasets: synthetic generators, CSV ingestion, feature scaling, splits and metrics."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IngestionError, UsageError

FIG2_POINTS = 21
FIG2_NOISE = 0.05
ADDITIVE_NOISE_STD = 0.1


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    t: np.ndarray
    feature_names: tuple = ()
    transform: "FeatureTransform | None" = None
    rejected_lines: tuple = ()

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] == 1 and np.ndim(self.X) == 1:
            X = X.T
        t = np.asarray(self.t, dtype=float).ravel()
        if X.shape[0] != t.size:
            raise UsageError(f"{X.shape[0]} feature rows but {t.size} targets")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{i}" for i in range(X.shape[1])))

    def __len__(self):
        return self.t.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], t=self.t[idx])

    def to_csv(self, target_name: str = "t") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.feature_names) + [target_name])
        for row, target in zip(self.X, self.t):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])
        return buf.getvalue()


def gen_fig2(seed: int = 0, noise: float = FIG2_NOISE) -> Dataset:
    """21 points equally spaced on [-1, 1] with targets ``sin(pi x)`` plus Gaussian noise."""
    x = np.linspace(-1.0, 1.0, FIG2_POINTS)
    t = np.sin(np.pi * x)
    if noise:
        t = t + np.random.default_rng(seed).normal(0.0, noise, x.size)
    return Dataset(x[:, None], t, ("x",))


ADDITIVE_COMPONENTS = {
    "sine": lambda x: np.sin(np.pi * x),
    "quadratic": lambda x: 2.0 * x ** 2 - 2.0 / 3.0,
    "softstep": lambda x: np.tanh(4.0 * x),
    "linear": lambda x: x,
}
DEFAULT_COMPONENTS = ("sine", "quadratic", "softstep")


def gen_additive(n: int, m: int, seed: int = 0, components=DEFAULT_COMPONENTS,
                 noise_std: float = ADDITIVE_NOISE_STD) -> Dataset:
    """Independent uniform features on [-1, 1]; ``t = sum_i g_i(x_i) + noise``.

    ``g_i`` cycles through ``components`` (names from ``ADDITIVE_COMPONENTS``).
    """
    if n < 1 or m < 1:
        raise UsageError("need n >= 1 samples and m >= 1 features")
    unknown = set(components) - set(ADDITIVE_COMPONENTS)
    if unknown or not components:
        raise UsageError(f"unknown components {sorted(unknown)}; choose from {sorted(ADDITIVE_COMPONENTS)}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, (n, m))
    t = sum(ADDITIVE_COMPONENTS[components[i % len(components)]](X[:, i]) for i in range(m))
    t = t + rng.normal(0.0, noise_std, n)
    return Dataset(X, t)


def _parse_cell(text):
    """Float value, ``None`` for a missing/NaN/inf cell; raises ValueError for text."""
    text = text.strip()
    if not text:
        return None
    value = float(text)
    return value if math.isfinite(value) else None


def load_csv(path, target_column: str) -> Dataset:
    """Read a comma-separated file with a header row.

    Rows holding empty, NaN or infinite cells are dropped (their line numbers
    are kept in ``rejected_lines`` and reported in a warning).  Ragged rows and
    non-numeric cells are fatal.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if target_column not in header:
        raise IngestionError(f"{path}: no column {target_column!r}; available columns: {', '.join(header)}")
    ti = header.index(target_column)
    ragged, bad, rejected, data = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            ragged.append(lineno)
            continue
        try:
            values = [_parse_cell(c) for c in row]
        except ValueError:
            bad.append(lineno)
            continue
        if any(v is None for v in values):
            rejected.append(lineno)
            continue
        data.append(values)
    if ragged or bad:
        parts = []
        if ragged:
            parts.append(f"ragged rows at lines {ragged}")
        if bad:
            parts.append(f"non-numeric cells at lines {bad}")
        raise IngestionError(f"{path}: " + "; ".join(parts), ragged + bad)
    if rejected:
        warnings.warn(f"{path}: rejected {len(rejected)} rows with missing/non-finite values "
                      f"(lines {rejected})", stacklevel=2)
    if not data:
        raise IngestionError(f"{path}: no usable data rows", rejected)
    arr = np.array(data, dtype=float)
    names = tuple(h for i, h in enumerate(header) if i != ti)
    return Dataset(np.delete(arr, ti, axis=1), arr[:, ti], names, rejected_lines=tuple(rejected))


@dataclass(frozen=True, eq=False)
class FeatureTransform:
    """Per-feature affine map ``z = (x - offset) * scale``."""

    mode: str
    offset: np.ndarray
    scale: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.offset) * self.scale

    def inverse(self, Z):
        scale = np.where(self.scale == 0, 1.0, self.scale)
        return np.asarray(Z, dtype=float) / scale + self.offset

    def to_dict(self):
        return {"mode": self.mode, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], np.asarray(d["offset"], dtype=float), np.asarray(d["scale"], dtype=float))


NORMALIZE_MODES = ("minmax_to_grid", "zscore")


def fit_transform(X, mode: str = "minmax_to_grid") -> FeatureTransform:
    X = np.asarray(X, dtype=float)
    if mode == "minmax_to_grid":
        lo, hi = X.min(0), X.max(0)
        offset, spread = (lo + hi) / 2.0, (hi - lo) / 2.0
    elif mode == "zscore":
        offset, spread = X.mean(0), X.std(0)
    else:
        raise UsageError(f"unknown normalisation mode {mode!r}; choose from {NORMALIZE_MODES}")
    constant = spread == 0
    if np.any(constant):
        warnings.warn(f"constant feature columns {np.flatnonzero(constant).tolist()} mapped to 0", stacklevel=3)
    scale = np.where(constant, 0.0, 1.0 / np.where(constant, 1.0, spread))
    return FeatureTransform(mode, offset, scale)


def normalize(ds: Dataset, mode: str = "minmax_to_grid", transform: FeatureTransform | None = None):
    """Scale features (``minmax_to_grid`` maps each to [-1, 1]); returns ``(dataset, transform)``."""
    if transform is None:
        transform = fit_transform(ds.X, mode)
    return replace(ds, X=transform.apply(ds.X), transform=transform), transform


def denormalize(ds: Dataset) -> Dataset:
    if ds.transform is None:
        return ds
    return replace(ds, X=ds.transform.inverse(ds.X), transform=None)


def pearson(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def metrics(predictions, targets) -> dict:
    """RMSE, MAE and Pearson correlation (``None`` when either side has zero variance)."""
    y = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if y.size != t.size:
        raise UsageError(f"length mismatch: {y.size} predictions vs {t.size} targets")
    if y.size == 0:
        raise UsageError("metrics need at least one sample")
    r = y - t
    return {"rmse": float(np.sqrt(np.mean(r ** 2))), "pearson": pearson(y, t),
            "mae": float(np.mean(np.abs(r)))}


@dataclass(frozen=True)
class RandomSplit:
    fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class KFold:
    k: int = 3
    seed: int = 0


def split(n: int, scheme) -> list:
    """Index partitions as a list of ``(train_idx, test_idx)`` pairs.

    ``RandomSplit`` yields one pair with ``round(fraction * n)`` training rows;
    ``KFold`` yields ``k`` pairs whose test sets partition ``range(n)``.
    """
    if isinstance(scheme, RandomSplit):
        if not 0 < scheme.fraction < 1:
            raise UsageError("split fraction must lie strictly between 0 and 1")
        order = np.random.default_rng(scheme.seed).permutation(n)
        n_train = int(round(scheme.fraction * n))
        return [(np.sort(order[:n_train]), np.sort(order[n_train:]))]
    if isinstance(scheme, KFold):
        if scheme.k < 2 or scheme.k > n:
            raise UsageError(f"k-fold needs 2 <= k <= n, got k={scheme.k}, n={n}")
        order = np.random.default_rng(scheme.seed).permutation(n)
        folds = np.array_split(order, scheme.k)
        return [(np.sort(np.concatenate(folds[:i] + folds[i + 1:])), np.sort(f)) for i, f in enumerate(folds)]
    raise UsageError(f"unknown split scheme {scheme!r}")
