"""Cross-fitted nuisance regressions: outcome means, propensity, theta and nu.

Every bound in this package is expressed through one primitive: a lower bound
on the mean of ``s * Y`` in arm ``a`` (``s`` = +1 or -1).  For each
``(arm, sign)`` pair a fold stores

* ``theta``: the Gamma-weighted conditional mean of ``s * Y`` in that arm,
* ``nu``: the normalizer ``1 + (G - 1) P(s Y < theta(x) | x, arm)``, fit on a
  held-out half of the training fold against a separately fitted theta.

The treated lower bound uses ``(1, +1)``, the control upper bound ``(0, -1)``
(equivalently theta with ratio ``1/G`` on the raw outcome); upper bounds on the
effect use ``(1, -1)`` and ``(0, +1)``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data_model import AnalysisConfig, ConfigError, Dataset, FoldPlan, SieveSettings
from .gamma_loss import (
    SingularDesignError,
    _solve,
    conditioning_ridge,
    fit_theta_design,
    loss_value,
)
from .sieve import SieveBasis, design_matrix, polynomial_basis, spline_basis

ARM_SIGNS = ((1, 1), (0, -1), (1, -1), (0, 1))
LOWER_PAIRS = ((1, 1), (0, -1))
UPPER_PAIRS = ((1, -1), (0, 1))


class SeparationWarning(UserWarning):
    """Logistic fit did not converge, typically because the arms are separable."""


class FoldError(ValueError):
    """A training fold lacks one of the treatment arms."""


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    """``x -> link(b(x)' beta)`` optionally clamped to ``[lower, upper]``.

    ``train_index`` records the global row indices the fit used.
    """

    basis: SieveBasis
    coefficients: np.ndarray
    link: str = "identity"
    lower: float | None = None
    upper: float | None = None
    train_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def raw(self, X) -> np.ndarray:
        eta = design_matrix(self.basis, X) @ self.coefficients
        return expit(eta) if self.link == "logit" else eta

    def __call__(self, X) -> np.ndarray:
        out = self.raw(X)
        if self.lower is not None or self.upper is not None:
            out = np.clip(out, self.lower, self.upper)
        return out


def _index(index, n):
    return np.arange(n) if index is None else np.asarray(index, dtype=np.int64)


def ridge_solve(B: np.ndarray, y: np.ndarray, ridge: float, jitter: bool = True) -> np.ndarray:
    """Minimizer of ``mean(0.5 * (y - B beta)**2) + ridge * |beta|^2``."""
    n, m = B.shape
    lam = ridge if (ridge > 0 or not jitter) else conditioning_ridge(B)
    return _solve(B.T @ B / n + 2.0 * lam * np.eye(m), B.T @ y / n,
                  "use a smaller basis or a positive ridge penalty")


def fit_outcome_mean(X, Y, basis: SieveBasis, ridge: float = 0.0, *, index=None,
                     jitter: bool = True) -> LinearPredictor:
    """Ridge least squares of ``Y`` on the sieve design within one arm."""
    Y = np.asarray(Y, dtype=float)
    if Y.size == 0:
        raise FoldError("cannot fit an outcome mean on an empty arm")
    beta = ridge_solve(design_matrix(basis, X), Y, ridge, jitter)
    return LinearPredictor(basis, beta, train_index=_index(index, Y.size))


def fit_propensity(X, Z, basis: SieveBasis, clip: float = 0.01, max_iter: int = 100,
                   ridge: float = 0.0, tol: float = 1e-10, *, index=None) -> LinearPredictor:
    """Logistic regression of ``Z`` on the sieve design by damped Newton steps.

    Predictions are clipped to ``[clip, 1 - clip]``.  If the iteration stalls
    (separable arms) the last iterate is kept and a :class:`SeparationWarning`
    is issued.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.min() == Z.max():
        raise FoldError("propensity fit needs both arms")
    B = design_matrix(basis, X)
    n, m = B.shape

    def nll(beta):
        eta = B @ beta
        return float(np.mean(np.logaddexp(0.0, eta) - Z * eta) + ridge * beta @ beta)

    beta = np.zeros(m)
    p0 = Z.mean()
    beta[0] = math.log(p0 / (1 - p0))
    obj = nll(beta)
    converged = False
    for _ in range(max_iter):
        p = expit(B @ beta)
        grad = B.T @ (p - Z) / n + 2 * ridge * beta
        H = (B * (p * (1 - p))[:, None]).T @ B / n + 2 * ridge * np.eye(m)
        H += 1e-12 * np.trace(H) / m * np.eye(m)
        try:
            direction = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta - t * direction
            cand_obj = nll(cand)
            if cand_obj <= obj or t < 1e-10:
                break
            t *= 0.5
        decrease = obj - cand_obj
        beta, obj = cand, min(obj, cand_obj)
        if np.max(np.abs(grad)) < tol or (t < 1e-10) or 0 <= decrease < tol * 1e-3:
            converged = np.max(np.abs(B.T @ (expit(B @ beta) - Z) / n + 2 * ridge * beta)) < 1e-6
            break
    if not converged or np.max(np.abs(B @ beta)) > 30:
        warnings.warn("propensity fit did not converge; arms may be separable", SeparationWarning)
    return LinearPredictor(basis, beta, "logit", clip, 1.0 - clip, _index(index, n))


def nu_targets(sY: np.ndarray, theta_at_x: np.ndarray, gamma: float) -> np.ndarray:
    return 1.0 + (gamma - 1.0) * (sY < theta_at_x)


def fit_nu(X, sY, theta_for_nu, gamma: float, basis: SieveBasis, ridge: float = 0.0,
           *, index=None) -> LinearPredictor:
    """Least squares for ``nu(x) = E[1 + (G - 1) 1{sY < theta(x)} | x]``, clamped to ``[1, G]``.

    ``sY`` is the sign-adjusted outcome; for the control-arm upper bound pass
    ``-Y`` and the negated theta, which turns the indicator into ``Y > theta0``.
    """
    sY = np.asarray(sY, dtype=float)
    if sY.size == 0:
        raise FoldError("cannot fit nu on an empty arm")
    t = nu_targets(sY, theta_for_nu(X), gamma)
    beta = ridge_solve(design_matrix(basis, X), t, ridge)
    return LinearPredictor(basis, beta, "identity", 1.0, float(gamma), _index(index, sY.size))


# --------------------------------------------------------------------------- tuning


@dataclass(frozen=True)
class FitSpec:
    degree: int
    ridge: float


@dataclass(frozen=True)
class Tuning:
    """Chosen ``(degree, ridge)`` per nuisance; ``theta``/``nu``/``mu`` keyed by arm."""

    mu: dict
    theta: dict
    nu: dict
    propensity: FitSpec

    @classmethod
    def fixed(cls, s: SieveSettings) -> "Tuning":
        spec = FitSpec(s.degree, float(s.ridge))
        return cls({0: spec, 1: spec}, {0: spec, 1: spec}, {0: spec, 1: spec},
                   FitSpec(s.propensity_degree, 0.0))


def make_basis(settings: SieveSettings, degree: int, X: np.ndarray) -> SieveBasis:
    X = np.asarray(X, dtype=float)
    if settings.kind == "polynomial":
        return polynomial_basis(X.shape[1], degree)
    return spline_basis(X, degree, settings.spline_order)


def cv_select(candidates, fit_and_score, n: int, folds: int = 10, seed: int = 0):
    """Pick the candidate with the smallest K-fold CV loss.

    ``fit_and_score(candidate, train_idx, test_idx)`` returns the summed test
    loss.  Ties go to the earlier candidate, so pass candidates sorted by basis
    size and then ridge.  Returns ``(best, scores)``.
    """
    candidates = list(candidates)
    if len(candidates) == 1:
        return candidates[0], [float("nan")]
    K = max(2, min(folds, n))
    assign = np.empty(n, dtype=np.int64)
    assign[np.random.default_rng(seed).permutation(n)] = np.arange(n) % K
    scores = []
    for cand in candidates:
        total = 0.0
        for k in range(K):
            try:
                total += fit_and_score(cand, np.flatnonzero(assign != k), np.flatnonzero(assign == k))
            except (SingularDesignError, FoldError, np.linalg.LinAlgError):
                total = math.inf
                break
        scores.append(total / n)
    best = int(np.argmin(scores))
    return candidates[best], scores


def select_tuning(data: Dataset, config: AnalysisConfig) -> Tuning:
    """Cross-validate sieve degree and ridge for each nuisance on the full sample.

    Losses: squared error for outcome means, the Gamma-loss for theta, squared
    error on the nu targets, log-loss for the propensity.  Candidates are
    ordered by basis size then ridge, so ties favour the smaller model.
    """
    s = config.sieve
    if s.ridge != "cv":
        return Tuning.fixed(s)
    gamma = config.gamma
    X, Y, Z = data.covariates, data.outcomes, data.treatments

    def ordered(cands):
        return sorted(cands, key=lambda c: (make_basis(s, c.degree, X).size, c.ridge))

    grid = ordered(FitSpec(dg, float(r)) for dg, r in itertools.product(s.degree_grid, s.ridge_grid))
    seed = config.seed
    mu, theta, nu = {}, {}, {}
    for a, sign in LOWER_PAIRS:
        idx = np.flatnonzero(Z == a)
        Xa, Ya = X[idx], sign * Y[idx]

        def mu_score(c, tr, te):
            b = make_basis(s, c.degree, Xa[tr])
            f = fit_outcome_mean(Xa[tr], Ya[tr], b, c.ridge)
            return float(np.sum((Ya[te] - f(Xa[te])) ** 2))

        def theta_score(c, tr, te):
            b = make_basis(s, c.degree, Xa[tr])
            beta, _ = fit_theta_design(design_matrix(b, Xa[tr]), Ya[tr], gamma, c.ridge,
                                       config.tol, config.max_iter)
            return float(np.sum(loss_value(design_matrix(b, Xa[te]) @ beta, Ya[te], gamma)))

        mu[a], _ = cv_select(grid, mu_score, idx.size, s.cv_folds, seed)
        theta[a], _ = cv_select(grid, theta_score, idx.size, s.cv_folds, seed)
        tb = make_basis(s, theta[a].degree, Xa)
        beta, _ = fit_theta_design(design_matrix(tb, Xa), Ya, gamma, theta[a].ridge,
                                   config.tol, config.max_iter)
        targets = nu_targets(Ya, design_matrix(tb, Xa) @ beta, gamma)

        def nu_score(c, tr, te):
            b = make_basis(s, c.degree, Xa[tr])
            f = fit_outcome_mean(Xa[tr], targets[tr], b, c.ridge)
            return float(np.sum((targets[te] - f(Xa[te])) ** 2))

        nu[a], _ = cv_select(grid, nu_score, idx.size, s.cv_folds, seed) if gamma > 1 else (grid[0], None)

    pgrid = ordered(FitSpec(dg, 0.0) for dg in sorted(set(s.degree_grid) | {s.propensity_degree}))

    def prop_score(c, tr, te):
        b = make_basis(s, c.degree, X[tr])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SeparationWarning)
            f = fit_propensity(X[tr], Z[tr], b, config.propensity_clip)
        p = f(X[te])
        return float(-np.sum(Z[te] * np.log(p) + (1 - Z[te]) * np.log1p(-p)))

    prop, _ = cv_select(pgrid, prop_score, data.n, s.cv_folds, seed)
    return Tuning(mu, theta, nu, prop)


# --------------------------------------------------------------------------- cross-fitting


@dataclass(frozen=True, eq=False)
class ArmFit:
    """theta and nu for the lower bound on ``E[s * Y(arm)]``."""

    arm: int
    sign: int
    theta: LinearPredictor
    nu: LinearPredictor
    theta_for_nu: LinearPredictor
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    """All nuisance fits for one cross-fitting fold."""

    fold: int
    gamma: float
    clip: float
    propensity: LinearPredictor
    mu: dict
    arms: dict
    train_index: np.ndarray
    test_index: np.ndarray

    def e1(self, X) -> np.ndarray:
        return self.propensity(X)

    def theta(self, arm: int, sign: int, X) -> np.ndarray:
        return self.arms[(arm, sign)].theta(X)

    def nu(self, arm: int, sign: int, X) -> np.ndarray:
        return self.arms[(arm, sign)].nu(X)

    # the four named functions of the lower-bound pipeline, on the outcome scale
    def theta1(self, X):
        return self.theta(1, 1, X)

    def theta0(self, X):
        return -self.theta(0, -1, X)

    def nu1(self, X):
        return self.nu(1, 1, X)

    def nu0(self, X):
        return self.nu(0, -1, X)

    def mu11(self, X):
        return self.mu[1](X)

    def mu00(self, X):
        return self.mu[0](X)

    def used_indices(self) -> np.ndarray:
        parts = [self.propensity.train_index, self.mu[0].train_index, self.mu[1].train_index]
        for f in self.arms.values():
            parts += [f.theta.train_index, f.nu.train_index, f.theta_for_nu.train_index]
        return np.unique(np.concatenate(parts))


def _theta_predictor(X, sY, basis, gamma, spec, index, config) -> tuple[LinearPredictor, dict]:
    beta, diag = fit_theta_design(design_matrix(basis, X), sY, gamma, spec.ridge,
                                  config.tol, config.max_iter)
    return LinearPredictor(basis, beta, train_index=np.asarray(index)), diag


def nested_halves(train_index: np.ndarray, Z: np.ndarray, seed: int, fold: int):
    """Split a training fold into two halves, stratified by arm."""
    rng = np.random.default_rng([seed, fold, 1])
    first, second = [], []
    for a in (0, 1):
        idx = train_index[Z[train_index] == a]
        idx = idx[rng.permutation(idx.size)]
        h = (idx.size + 1) // 2
        first.append(idx[:h])
        second.append(idx[h:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def fit_arms(data: Dataset, train: np.ndarray, fold: int, config: AnalysisConfig,
             tuning: Tuning, pairs=ARM_SIGNS) -> dict:
    """theta and nu fits for each requested ``(arm, sign)`` on one training fold."""
    X, Y, Z = data.covariates, data.outcomes, data.treatments
    g = config.gamma
    s = config.sieve
    h1, h2 = nested_halves(train, Z, config.seed, fold)
    out = {}
    for a, sign in pairs:
        spec_t, spec_n = tuning.theta[a], tuning.nu[a]
        idx = train[Z[train] == a]
        if idx.size == 0:
            raise FoldError(f"training complement of fold {fold} has no observations in arm {a}")
        basis = make_basis(s, spec_t.degree, X[train])
        theta, diag = _theta_predictor(X[idx], sign * Y[idx], basis, g, spec_t, idx, config)
        i1 = h1[Z[h1] == a]
        i2 = h2[Z[h2] == a]
        if i1.size == 0 or i2.size == 0:
            raise FoldError(f"nested split of fold {fold} leaves arm {a} empty")
        if g == 1.0:
            # nu is identically 1; skip the nested theta fit
            tnu = theta
            nu = LinearPredictor(polynomial_basis(X.shape[1], 0), np.ones(1), "identity", 1.0, 1.0, np.asarray(i2))
        else:
            tnu, _ = _theta_predictor(X[i1], sign * Y[i1], basis, g, spec_t, i1, config)
            nb = make_basis(s, spec_n.degree, X[train])
            nu = fit_nu(X[i2], sign * Y[i2], tnu, g, nb, spec_n.ridge, index=i2)
        out[(a, sign)] = ArmFit(a, sign, theta, nu, tnu, diag)
    return out


def fit_base(data: Dataset, train: np.ndarray, config: AnalysisConfig, tuning: Tuning):
    """Gamma-free fits for a fold: propensity and the two outcome means."""
    X, Y, Z = data.covariates, data.outcomes, data.treatments
    s = config.sieve
    pb = make_basis(s, tuning.propensity.degree, X[train])
    prop = fit_propensity(X[train], Z[train], pb, config.propensity_clip,
                          ridge=tuning.propensity.ridge, index=train)
    mu = {}
    for a in (0, 1):
        idx = train[Z[train] == a]
        mb = make_basis(s, tuning.mu[a].degree, X[train])
        mu[a] = fit_outcome_mean(X[idx], Y[idx], mb, tuning.mu[a].ridge, index=idx)
    return prop, mu


def cross_fit(data: Dataset, plan: FoldPlan, config: AnalysisConfig, tuning: Tuning | None = None,
              base: list | None = None, pairs=ARM_SIGNS, threads: int = 1) -> list[NuisanceSet]:
    """Fit one :class:`NuisanceSet` per fold on that fold's complement.

    ``base`` may carry the NuisanceSets from an earlier call on the same plan;
    their propensity and outcome-mean fits are reused (they do not depend on
    Gamma).
    """
    if plan.n != data.n:
        raise ConfigError(f"fold plan covers {plan.n} rows but the data has {data.n}")
    tuning = tuning or select_tuning(data, config)
    Z = data.treatments

    def one(k):
        train = plan.train_index(k)
        for a in (0, 1):
            if not np.any(Z[train] == a):
                raise FoldError(f"training complement of fold {k} has no observations in arm {a}")
        if base is not None:
            prop, mu = base[k].propensity, base[k].mu
        else:
            prop, mu = fit_base(data, train, config, tuning)
        arms = fit_arms(data, train, k, config, tuning, pairs)
        return NuisanceSet(k, config.gamma, config.propensity_clip, prop, mu, arms,
                           train, plan.test_index(k))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(plan.K)))
    return [one(k) for k in range(plan.K)]


def nuisance_table(nset: NuisanceSet, points) -> dict:
    """Columns of nuisance values at ``points`` for diagnostic dumps."""
    P = np.asarray(points, dtype=float)
    return {
        "theta1": nset.theta1(P), "theta0": nset.theta0(P),
        "nu1": nset.nu1(P), "nu0": nset.nu0(P), "e1": nset.e1(P),
        "mu11": nset.mu11(P), "mu00": nset.mu00(P),
    }
