"""Independent reference implementations used only by tests."""

import math

import numpy as np


def psi_sum(theta, y, g):
    r = np.asarray(y, dtype=float) - theta
    return float(np.sum(np.where(r > 0, r, 0.0)) - g * np.sum(np.where(r < 0, -r, 0.0)))


def bisect_root(y, g, iters=200):
    """Root of the empirical estimating equation by plain bisection."""
    lo, hi = float(np.min(y)), float(np.max(y))
    if lo == hi:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if psi_sum(mid, y, g) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def aipw(X, Y, Z, folds, K, basis_fn, ridge, e1_per_fold):
    """Cross-fitted AIPW estimate and score standard deviation.

    Outcome regressions are refit here by a direct ridge solve; propensity
    values for each test fold are supplied by the caller.
    """
    scores = []
    for k in range(K):
        tr, te = folds != k, folds == k
        mus = {}
        for a in (0, 1):
            m = tr & (Z == a)
            B = basis_fn(X[m])
            n, p = B.shape
            beta = np.linalg.solve(B.T @ B / n + 2 * ridge * np.eye(p), B.T @ Y[m] / n)
            mus[a] = basis_fn(X[te]) @ beta
        e1 = e1_per_fold[k]
        z, y = Z[te], Y[te]
        s = (mus[1] - mus[0] + z * (y - mus[1]) / e1 - (1 - z) * (y - mus[0]) / (1 - e1))
        scores.append(s)
    s = np.concatenate(scores)
    v = float(np.mean(s))
    return v, math.sqrt(float(np.mean((s - v) ** 2)))
