"""Observational data container, cross-fitting fold plans and analysis settings."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Input data failed validation."""


class ConfigError(ValueError):
    """An analysis or simulation setting is out of range."""


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of covariates, outcomes and binary treatments.

    ``covariates`` is stored as an ``(n, d)`` array (``d`` may be 0).  When the
    covariates were min-max rescaled on ingestion, ``scale_min`` and
    ``scale_span`` hold the affine map so that :meth:`unscale` recovers the
    original units.
    """

    covariates: np.ndarray
    outcomes: np.ndarray
    treatments: np.ndarray
    covariate_names: tuple[str, ...] = ()
    scale_min: np.ndarray | None = None
    scale_span: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        y = np.asarray(self.outcomes, dtype=float).ravel()
        z = np.asarray(self.treatments).ravel()
        n = y.shape[0]
        if x.ndim != 2 or x.shape[0] != n or z.shape[0] != n:
            raise DataError(
                f"inconsistent lengths: covariates {x.shape[0]}, outcomes {n}, treatments {z.shape[0]}"
            )
        if n < 2:
            raise DataError("need at least 2 observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("non-finite covariate or outcome value")
        zf = z.astype(float)
        if not np.all((zf == 0) | (zf == 1)):
            bad = int(np.flatnonzero((zf != 0) & (zf != 1))[0]) + 1
            raise DataError(f"invalid treatment at row {bad}")
        z = zf.astype(np.int8)
        if z.sum() == 0 or z.sum() == n:
            raise DataError("both treatment arms must be nonempty")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("covariate_names length does not match covariate columns")
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "outcomes", _frozen(y))
        object.__setattr__(self, "treatments", _frozen(z, np.int8))
        object.__setattr__(self, "covariate_names", names)
        for attr in ("scale_min", "scale_span"):
            v = getattr(self, attr)
            if v is not None:
                object.__setattr__(self, attr, _frozen(v))

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatments.sum())

    def subset(self, index) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(X, Y, Z)`` copies restricted to ``index``."""
        index = np.asarray(index)
        return self.covariates[index], self.outcomes[index], self.treatments[index]

    def negated(self) -> "Dataset":
        """Same data with the outcome sign flipped (used for upper bounds)."""
        return Dataset(
            self.covariates, -self.outcomes, self.treatments,
            self.covariate_names, self.scale_min, self.scale_span,
        )

    def scale(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.scale_min is None:
            return x.copy()
        return (x - self.scale_min) / self.scale_span

    def unscale(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.scale_min is None:
            return x.copy()
        return x * self.scale_span + self.scale_min


def minmax_rescale(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map each column of ``x`` onto [0, 1]; constant columns map to 0."""
    x = np.asarray(x, dtype=float)
    lo = x.min(axis=0) if x.shape[0] else np.zeros(x.shape[1])
    span = x.max(axis=0) - lo if x.shape[0] else np.ones(x.shape[1])
    span = np.where(span > 0, span, 1.0)
    return (x - lo) / span, lo, span


def load_csv(
    path,
    outcome: str,
    treatment: str,
    covariates: Sequence[str] | str | None = "rest",
    *,
    delimiter: str = ",",
    rescale: bool = True,
) -> Dataset:
    """Read a delimited file into a validated :class:`Dataset`.

    ``covariates`` is a list of column names, or ``"rest"`` / ``None`` for every
    column other than the outcome and treatment.  Rows with missing values are
    rejected rather than imputed.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if any(c.strip() for c in r)]

    if covariates is None or covariates == "rest":
        cov_names = [h for h in header if h not in (outcome, treatment)]
    elif isinstance(covariates, str):
        cov_names = [c.strip() for c in covariates.split(",") if c.strip()]
    else:
        cov_names = list(covariates)
    for col in [outcome, treatment, *cov_names]:
        if col not in header:
            raise DataError(f"missing column {col!r}")
    pos = {h: i for i, h in enumerate(header)}

    n = len(rows)
    y = np.empty(n)
    z = np.empty(n)
    x = np.empty((n, len(cov_names)))
    for k, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {k} has {len(row)} fields, expected {len(header)}")

        def cell(col):
            raw = row[pos[col]].strip()
            if raw == "" or raw.upper() in ("NA", "NAN"):
                raise DataError(f"missing value at row {k}, column {col!r}")
            try:
                v = float(raw)
            except ValueError:
                raise DataError(f"non-numeric value {raw!r} at row {k}, column {col!r}") from None
            if not math.isfinite(v):
                raise DataError(f"non-finite value at row {k}, column {col!r}")
            return v

        t = cell(treatment)
        if t not in (0.0, 1.0):
            raise DataError(f"invalid treatment at row {k}")
        z[k - 1] = t
        y[k - 1] = cell(outcome)
        for j, col in enumerate(cov_names):
            x[k - 1, j] = cell(col)

    lo = span = None
    if rescale and x.shape[1]:
        x, lo, span = minmax_rescale(x)
    return Dataset(x, y, z, tuple(cov_names), lo, span)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Assignment of observations to ``K`` cross-fitting folds (0-based labels)."""

    assignments: np.ndarray
    K: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "assignments", _frozen(self.assignments, np.int64))

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def test_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def train_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Shuffle ``0..n-1`` with a seeded generator and deal indices round-robin."""
    if not (2 <= K <= n):
        raise ConfigError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % K
    return FoldPlan(assignments, K, int(seed))


@dataclass(frozen=True)
class SieveSettings:
    """Sieve family and tuning for the nuisance regressions.

    ``degree`` is the per-coordinate polynomial degree, or the number of
    interior knots for splines.  ``ridge`` is a penalty value or ``"cv"``, in
    which case degree and ridge are chosen by cross-validation over
    ``degree_grid`` and ``ridge_grid``.
    """

    kind: str = "polynomial"
    degree: int = 2
    spline_order: int = 2
    ridge: float | str = 1e-4
    degree_grid: tuple[int, ...] = (1, 2)
    ridge_grid: tuple[float, ...] = (1e-6, 1e-3, 1e-1)
    cv_folds: int = 10
    propensity_degree: int = 1

    def __post_init__(self):
        if self.kind not in ("polynomial", "spline"):
            raise ConfigError(f"unknown sieve kind {self.kind!r}")
        if self.degree < 0 or self.propensity_degree < 0:
            raise ConfigError("sieve degree must be nonnegative")
        if self.kind == "spline" and self.spline_order < 1:
            raise ConfigError("spline order must be >= 1")
        if isinstance(self.ridge, str):
            if self.ridge != "cv":
                raise ConfigError(f"ridge must be a number or 'cv', got {self.ridge!r}")
        elif not self.ridge >= 0:
            raise ConfigError("ridge must be nonnegative")


@dataclass(frozen=True)
class AnalysisConfig:
    gamma: float = 1.0
    alpha: float = 0.05
    folds: int = 5
    propensity_clip: float = 0.01
    weight_clip_share: float = 0.05
    seed: int = 0
    sieve: SieveSettings = field(default_factory=SieveSettings)
    tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if not (self.gamma >= 1 and math.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be a finite value >= 1, got {self.gamma}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.folds < 2:
            raise ConfigError("need at least 2 folds")
        if not 0 < self.propensity_clip < 0.5:
            raise ConfigError("propensity_clip must lie in (0, 0.5)")
        if not 0 < self.weight_clip_share <= 1:
            raise ConfigError("weight_clip_share must lie in (0, 1]")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")

    def with_gamma(self, gamma: float) -> "AnalysisConfig":
        return replace(self, gamma=float(gamma))

    def digest(self) -> str:
        """Short stable hash of the settings, excluding gamma."""
        d = asdict(self)
        d.pop("gamma")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
