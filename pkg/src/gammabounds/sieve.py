"""Tensor-product polynomial and truncated-power spline sieves on [0, 1]^d.

Basis functions are ordered row-major over coordinate indices: for ``d = 2``
and per-coordinate functions ``u_0..u_p`` / ``v_0..v_p`` the columns are
``u_0 v_0, u_0 v_1, ..., u_1 v_0, ...``.  Column 0 is always the constant 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

from .data_model import ConfigError

#: Above this degree the polynomial sieve switches to shifted Legendre
#: polynomials, which span the same space with better conditioning.
MAX_MONOMIAL_DEGREE = 6


class ClampWarning(UserWarning):
    """Evaluation points outside [0, 1] were clamped."""


@dataclass(frozen=True)
class SieveBasis:
    """A finite-dimensional linear sieve.

    For ``kind="polynomial"`` each coordinate contributes ``1, x, ..., x**degree``.
    For ``kind="spline"`` each coordinate contributes
    ``1, x, ..., x**(order-1)`` and ``(x - t)_+**(order-1)`` for each of its knots.
    """

    kind: str
    dim: int
    degree: int = 0
    order: int = 2
    knots: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.kind not in ("polynomial", "spline"):
            raise ConfigError(f"unknown sieve kind {self.kind!r}")
        if self.dim < 0:
            raise ConfigError("dimension must be nonnegative")
        if self.kind == "polynomial" and self.degree < 0:
            raise ConfigError("degree must be nonnegative")
        if self.kind == "spline":
            if self.order < 1:
                raise ConfigError("spline order must be >= 1")
            knots = tuple(tuple(float(t) for t in kn) for kn in self.knots)
            if not knots:
                knots = ((),) * self.dim
            if len(knots) != self.dim:
                raise ConfigError("need one knot sequence per coordinate")
            for kn in knots:
                if any(not 0 < t < 1 for t in kn) or list(kn) != sorted(set(kn)):
                    raise ConfigError("knots must be sorted, distinct and inside (0, 1)")
            object.__setattr__(self, "knots", knots)

    def coordinate_sizes(self) -> list[int]:
        if self.kind == "polynomial":
            return [self.degree + 1] * self.dim
        return [self.order + len(kn) for kn in self.knots]

    @property
    def size(self) -> int:
        return math.prod(self.coordinate_sizes())

    def _coordinate_matrix(self, j: int, x: np.ndarray) -> np.ndarray:
        if self.kind == "polynomial":
            if self.degree > MAX_MONOMIAL_DEGREE:
                return legendre.legvander(2.0 * x - 1.0, self.degree)
            return np.vander(x, self.degree + 1, increasing=True)
        r = self.order
        cols = [np.vander(x, r, increasing=True)]
        kn = np.asarray(self.knots[j])
        if kn.size:
            cols.append(np.maximum(x[:, None] - kn[None, :], 0.0) ** (r - 1))
        return np.hstack(cols)


def polynomial_basis(dim: int, degree: int) -> SieveBasis:
    return SieveBasis("polynomial", dim, degree=degree)


def quantile_knots(x: np.ndarray, count: int) -> tuple[tuple[float, ...], ...]:
    """Interior knots at equally spaced quantiles of each covariate column.

    Knots that collide (discrete covariates) or land on the boundary are dropped.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if count <= 0:
        return ((),) * x.shape[1]
    levels = np.arange(1, count + 1) / (count + 1)
    out = []
    for col in x.T:
        q = np.unique(np.quantile(col, levels))
        out.append(tuple(float(t) for t in q if 0 < t < 1))
    return tuple(out)


def spline_basis(x: np.ndarray, n_knots: int, order: int = 2) -> SieveBasis:
    """Spline sieve with quantile knots placed from the pooled sample ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return SieveBasis("spline", x.shape[1], order=order, knots=quantile_knots(x, n_knots))


def design_matrix(basis: SieveBasis, points) -> np.ndarray:
    """Evaluate every basis function at every row of ``points`` -> ``(n, m)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, basis.dim) if basis.dim else pts.reshape(-1, 0)
    n = pts.shape[0]
    if pts.shape[1] != basis.dim:
        raise ConfigError(f"points have {pts.shape[1]} columns, basis expects {basis.dim}")
    outside = (pts < 0) | (pts > 1)
    if outside.any():
        warnings.warn(f"{int(outside.sum())} coordinate values outside [0, 1] clamped", ClampWarning)
        pts = np.clip(pts, 0.0, 1.0)
    out = np.ones((n, 1))
    for j in range(basis.dim):
        u = basis._coordinate_matrix(j, pts[:, j])
        out = (out[:, :, None] * u[:, None, :]).reshape(n, -1)
    return out


def eval_basis(basis: SieveBasis, x) -> np.ndarray:
    """Basis vector of length ``basis.size`` at a single point."""
    return design_matrix(basis, np.asarray(x, dtype=float).reshape(1, basis.dim))[0]


def default_size(n: int, d: int, p: float, c: float = 1.0) -> int:
    """Rate-optimal sieve size ``max(1, round(c * n**(1 / (2p + d))))``."""
    if p <= 0 or c <= 0:
        raise ConfigError("smoothness p and scale c must be positive")
    if n < 2 or d < 1:
        raise ConfigError("need n >= 2 and d >= 1")
    val = c * n ** (1.0 / (2.0 * p + d))
    return max(1, int(math.floor(val + 0.5 + 1e-9)))
