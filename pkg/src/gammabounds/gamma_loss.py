"""Asymmetrically weighted squared loss and its minimizers.

The loss ``l(theta, y) = 0.5 * ((y - theta)_+**2 + G * (y - theta)_-**2)``
up-weights observations below ``theta`` by ``G``.  Its negative derivative is
``psi(theta, y) = (y - theta)_+ - G * (y - theta)_-``; the zero of the
empirical mean of ``psi`` is the worst-case (smallest) mean of ``y`` over
likelihood ratios bounded by ``G``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .sieve import SieveBasis, design_matrix


class DomainError(ValueError):
    """Argument outside the domain of a loss-related function."""


class SingularDesignError(np.linalg.LinAlgError):
    """Weighted normal equations could not be solved."""


class ConvergenceError(RuntimeError):
    """Iteration limit reached; ``best`` holds the lowest-objective iterate."""

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


def _check_gamma(gamma_ratio):
    if not (gamma_ratio > 0 and math.isfinite(gamma_ratio)):
        raise DomainError(f"gamma_ratio must be positive and finite, got {gamma_ratio}")


def loss_value(theta, y, gamma_ratio):
    _check_gamma(gamma_ratio)
    r = np.asarray(y, dtype=float) - np.asarray(theta, dtype=float)
    out = 0.5 * np.where(r >= 0, r * r, gamma_ratio * r * r)
    return out if out.ndim else float(out)


def psi_value(theta, y, gamma_ratio):
    """``(y - theta)_+ - G (y - theta)_-``, the negative theta-derivative of the loss."""
    _check_gamma(gamma_ratio)
    r = np.asarray(y, dtype=float) - np.asarray(theta, dtype=float)
    out = np.where(r >= 0, r, gamma_ratio * r)
    return out if out.ndim else float(out)


def psi_tilde_value(theta, y, gamma_ratio):
    """Up-weighting variant ``G (y - theta)_+ - (y - theta)_-``.

    Identical to ``gamma_ratio * psi_value(theta, y, 1 / gamma_ratio)``.
    """
    _check_gamma(gamma_ratio)
    r = np.asarray(y, dtype=float) - np.asarray(theta, dtype=float)
    out = np.where(r >= 0, gamma_ratio * r, r)
    return out if out.ndim else float(out)


class SortedSample:
    """Sorted copy of a sample with prefix sums, for repeated root solves."""

    def __init__(self, samples):
        y = np.sort(np.asarray(samples, dtype=float).ravel())
        if y.size == 0:
            raise DomainError("scalar_root needs at least one sample")
        if not np.all(np.isfinite(y)):
            raise DomainError("samples must be finite")
        self.y = y
        self.prefix = np.concatenate(([0.0], np.cumsum(y)))
        self._j = np.arange(y.size)

    def root(self, gamma_ratio) -> float:
        _check_gamma(gamma_ratio)
        y, prefix, j = self.y, self.prefix, self._j
        n = y.size
        g = float(gamma_ratio)
        total = prefix[-1]
        # value of the estimating sum at theta = y[j]
        s = (total - prefix[:-1] - (n - j) * y) - g * (j * y - prefix[:-1])
        nonpos = s <= 0
        k = int(np.argmax(nonpos)) if nonpos.any() else n - 1
        if k == 0:
            return float(y[0])
        below = prefix[k]
        theta = (total - below + g * below) / ((n - k) + g * k)
        return float(min(max(theta, y[k - 1]), y[k]))


def scalar_root(samples, gamma_ratio) -> float:
    """Exact zero of ``theta -> sum_i psi(theta, y_i)``.

    The sum is piecewise affine and nonincreasing with breakpoints at the
    order statistics, so the root is found by locating the first order
    statistic where the sum is nonpositive and solving on the segment to its
    left.
    """
    _check_gamma(gamma_ratio)
    return SortedSample(samples).root(gamma_ratio)


def worst_case_weights(values, theta, gamma_ratio) -> np.ndarray:
    """Weights ``G`` below ``theta`` and 1 at or above it, normalized to sum 1."""
    _check_gamma(gamma_ratio)
    v = np.asarray(values, dtype=float).ravel()
    raw = np.where(v < theta, float(gamma_ratio), 1.0)
    return raw / raw.sum()


@dataclass(frozen=True, eq=False)
class ThetaModel:
    """Sieve fit of the Gamma-weighted conditional mean."""

    basis: SieveBasis
    coefficients: np.ndarray
    gamma_ratio: float
    ridge: float
    diagnostics: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        return design_matrix(self.basis, X) @ self.coefficients

    __call__ = predict


def _objective(B, y, beta, g, lam):
    r = y - B @ beta
    return float(np.mean(0.5 * np.where(r >= 0, r * r, g * r * r)) + lam * (beta @ beta))


def _solve(A, b, hint):
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise SingularDesignError(f"singular normal equations; {hint}") from None
    if not np.all(np.isfinite(sol)):
        raise SingularDesignError(f"non-finite solution of normal equations; {hint}")
    return sol


def conditioning_ridge(B: np.ndarray) -> float:
    """Tiny penalty ``1e-8 * trace(B'B / n) / m`` used when the caller asks for none."""
    n, m = B.shape
    return 1e-8 * float(np.einsum("ij,ij->", B, B)) / n / m


def fit_theta_design(
    B: np.ndarray,
    Y: np.ndarray,
    gamma_ratio: float,
    ridge: float = 0.0,
    tol: float = 1e-8,
    max_iter: int = 200,
    jitter: bool = True,
) -> tuple[np.ndarray, dict]:
    """IRLS on a precomputed design; returns ``(beta, diagnostics)``.

    Minimizes ``mean(loss(B beta, Y)) + ridge * |beta|^2``.  Each pass solves
    the weighted ridge normal equations for the current residual signs, which
    is a Newton step on the piecewise quadratic objective; steps that raise the
    objective are halved.
    """
    _check_gamma(gamma_ratio)
    if ridge < 0:
        raise DomainError("ridge must be nonnegative")
    B = np.asarray(B, dtype=float)
    y = np.asarray(Y, dtype=float).ravel()
    n, m = B.shape
    if n == 0:
        raise DomainError("no observations to fit")
    g = float(gamma_ratio)
    lam = float(ridge)
    if lam == 0 and jitter:
        lam = conditioning_ridge(B)
    hint = "increase the ridge penalty or shrink the basis"
    eye2 = 2.0 * lam * np.eye(m)

    def step(w):
        Bw = B * w[:, None]
        return _solve(Bw.T @ B / n + eye2, Bw.T @ y / n, hint)

    def grad(beta):
        r = y - B @ beta
        return B.T @ np.where(r >= 0, r, g * r) / n - 2.0 * lam * beta

    beta = step(np.ones(n))
    obj = _objective(B, y, beta, g, lam)
    halvings = 0
    for it in range(1, max_iter + 1):
        w = np.where(y - B @ beta >= 0, 1.0, g)
        cand = step(w)
        cand_obj = _objective(B, y, cand, g, lam)
        t = 1.0
        while cand_obj > obj * (1 + 1e-15) + 1e-300 and t > 1e-12:
            t *= 0.5
            halvings += 1
            cand = beta + t * (cand - beta)
            cand_obj = _objective(B, y, cand, g, lam)
        if cand_obj > obj:
            cand, cand_obj = beta, obj
        beta, obj = cand, cand_obj
        new_w = np.where(y - B @ beta >= 0, 1.0, g)
        res = float(np.max(np.abs(grad(beta)))) if m else 0.0
        fixed = t == 1.0 and np.array_equal(new_w, w)
        if fixed or res <= tol * (1.0 + float(np.linalg.norm(beta))):
            return beta, {
                "objective": obj, "iterations": it, "residual": res,
                "halvings": halvings, "ridge_used": lam,
            }
    diag = {"objective": obj, "iterations": max_iter, "residual": res,
            "halvings": halvings, "ridge_used": lam}
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", beta, diag)


def fit_theta(
    X,
    Y,
    basis: SieveBasis,
    gamma_ratio: float,
    ridge: float = 0.0,
    tol: float = 1e-8,
    max_iter: int = 200,
    jitter: bool = True,
) -> ThetaModel:
    """Fit ``theta(x) = b(x)' beta`` under the Gamma-weighted loss.

    With ``ridge=0`` a conditioning penalty of ``1e-8 * trace(B'B/n)/m`` is
    added unless ``jitter=False``, in which case a singular design raises
    :class:`SingularDesignError`.
    """
    B = design_matrix(basis, X)
    if B.shape[0] < B.shape[1]:
        warnings.warn(f"fewer observations ({B.shape[0]}) than basis functions ({B.shape[1]})")
    beta, diag = fit_theta_design(B, Y, gamma_ratio, ridge, tol, max_iter, jitter)
    return ThetaModel(basis, beta, float(gamma_ratio), float(ridge), diag)
