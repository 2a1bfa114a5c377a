"""Cross-fitted orthogonal estimators of effect bounds, their standard errors and CIs.

For arm ``a`` and sign ``s`` the per-observation score is

    L = 1{Z=a} s Y + 1{Z!=a} theta(X) + 1{Z=a} psi_theta(s Y) e_{1-a}(X) / (nu(X) e_a(X))

whose mean lower-bounds ``E[s Y(a)]``.  Negating recovers upper bounds, so

* ``mu1_lower = mean L(1,+)``, ``mu0_upper = -mean L(0,-)``,
* ``mu1_upper = -mean L(1,-)``, ``mu0_lower = mean L(0,+)``,
* ``tau_lower`` uses ``L(1,+) + L(0,-)`` and ``tau_upper`` uses ``-(L(1,-) + L(0,+))``.

At Gamma = 1 the scores are those of the augmented inverse-propensity
weighted (AIPW) estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data_model import AnalysisConfig, ConfigError, Dataset, FoldPlan, make_folds
from .gamma_loss import psi_value
from .nuisance import ARM_SIGNS, LOWER_PAIRS, NuisanceSet, Tuning, cross_fit, select_tuning

TARGETS = ("mu1_lower", "mu1_upper", "mu0_lower", "mu0_upper", "tau_lower", "tau_upper")

# (pairs, overall sign) making up each target's score
_TARGET_PARTS = {
    "mu1_lower": (((1, 1),), 1.0),
    "mu0_upper": (((0, -1),), -1.0),
    "mu1_upper": (((1, -1),), -1.0),
    "mu0_lower": (((0, 1),), 1.0),
    "tau_lower": (((1, 1), (0, -1)), 1.0),
    "tau_upper": (((1, -1), (0, 1)), -1.0),
}


# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Standard normal quantile, accurate to about 1e-15 after one Halley step."""
    if not 0 < p < 1:
        raise ConfigError(f"probability must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    # Halley refinement against the exact CDF
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


@dataclass(frozen=True, eq=False)
class BoundEstimate:
    """Point estimate and per-observation standard deviation ``se`` (not divided by sqrt(n))."""

    target: str
    value: float
    se: float
    n: int
    gamma: float
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def stderr(self) -> float:
        return self.se / math.sqrt(self.n)


@dataclass(frozen=True)
class ReportRow:
    gamma: float
    tau_lower: BoundEstimate
    tau_upper: BoundEstimate
    ci_low: float
    ci_high: float
    alpha: float


@dataclass(frozen=True)
class SensitivityReport:
    rows: tuple
    provenance: dict

    def plot_series(self) -> list[tuple[float, str, float]]:
        """Long-format ``(gamma, series, value)`` records for plotting."""
        out = []
        for r in self.rows:
            out += [(r.gamma, "bound_low", r.tau_lower.value),
                    (r.gamma, "bound_high", r.tau_upper.value),
                    (r.gamma, "ci_low", r.ci_low),
                    (r.gamma, "ci_high", r.ci_high)]
        return out


# --------------------------------------------------------------------------- CATE


def cate_bounds_from(mu11, mu00, e1, theta1_lower, theta0_upper, theta1_upper=None, theta0_lower=None):
    """Conditional effect bounds from nuisance values at a point.

    ``mu1- = mu11 e1 + theta1_lower e0`` and ``mu0+ = mu00 e0 + theta0_upper e1``;
    the upper bound swaps in the opposite-direction thetas.
    """
    e1 = np.asarray(e1, dtype=float)
    e0 = 1.0 - e1
    lower = (mu11 * e1 + theta1_lower * e0) - (mu00 * e0 + theta0_upper * e1)
    if theta1_upper is None or theta0_lower is None:
        return lower, None
    upper = (mu11 * e1 + theta1_upper * e0) - (mu00 * e0 + theta0_lower * e1)
    return lower, upper


def cate_bounds_at(x, nuisances: NuisanceSet, gamma: float | None = None):
    """``(tau_lower(x), tau_upper(x))`` from one fold's nuisances; ``x`` may be a batch."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = X.reshape(1, -1) if single else X
    if gamma is not None and not math.isclose(gamma, nuisances.gamma):
        raise ConfigError(f"nuisances were fit at gamma={nuisances.gamma}, not {gamma}")
    args = [nuisances.mu11(X), nuisances.mu00(X), nuisances.e1(X),
            nuisances.theta(1, 1, X), -nuisances.theta(0, -1, X)]
    if (1, -1) in nuisances.arms and (0, 1) in nuisances.arms:
        args += [-nuisances.theta(1, -1, X), nuisances.theta(0, 1, X)]
    lo, hi = cate_bounds_from(*args)
    if single:
        return float(lo[0]), (None if hi is None else float(hi[0]))
    return lo, hi


# --------------------------------------------------------------------------- scores


def clip_weights(w: np.ndarray, share: float) -> np.ndarray:
    """Cap nonnegative weights so none exceeds ``share`` of the (capped) total.

    The cap ``c`` solves ``c = share * sum(min(w, c))``.  Nothing is done when
    ``share >= 1`` or when fewer than ``1/share`` weights make the cap infeasible.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    if share >= 1 or n == 0 or n * share <= 1:
        return w.copy()
    total = w.sum()
    if w.max() <= share * total:
        return w.copy()
    desc = np.sort(w)[::-1]
    # tail sums taken directly; subtracting from the total cancels badly
    tail = np.cumsum(desc[::-1])[::-1]
    for k in range(1, n):
        # cap the k largest; the remainder stays as is
        denom = 1.0 - k * share
        if denom <= 0:
            break
        c = share * tail[k] / denom
        if desc[k] <= c <= desc[k - 1]:
            return np.minimum(w, c)
    return w.copy()


def score_mu1_lower(y: float, z: int, x, nuisances: NuisanceSet, factor_cap: float = math.inf) -> float:
    """Single-observation score for the treated-mean lower bound."""
    X = np.asarray(x, dtype=float).reshape(1, -1)
    theta = float(nuisances.theta(1, 1, X)[0])
    if z == 0:
        return theta
    e1 = float(nuisances.e1(X)[0])
    nu = float(nuisances.nu(1, 1, X)[0])
    factor = min((1 - e1) / (nu * e1), factor_cap)
    return y + psi_value(theta, y, nuisances.gamma) * factor


def arm_scores(X, Y, Z, nuisances: NuisanceSet, arm: int, sign: int, weight_clip_share: float):
    """Scores ``L(arm, sign)`` for a block of test observations."""
    sY = sign * Y
    theta = nuisances.theta(arm, sign, X)
    e1 = nuisances.e1(X)
    ea = e1 if arm == 1 else 1.0 - e1
    mask = Z == arm
    factor = np.zeros_like(Y)
    nu = nuisances.nu(arm, sign, X[mask])
    factor[mask] = clip_weights((1.0 - ea[mask]) / (nu * ea[mask]), weight_clip_share)
    psi = psi_value(theta, sY, nuisances.gamma)
    return np.where(mask, sY + psi * factor, theta)


def bound_scores(data: Dataset, plan: FoldPlan, nuisances: list, weight_clip_share: float,
                 pairs=ARM_SIGNS) -> tuple[dict, np.ndarray]:
    """Per-observation scores for each ``(arm, sign)``, in fold-then-index order.

    Returns ``(scores, order)`` where ``order`` lists the dataset row of each
    score entry.
    """
    if len(nuisances) != plan.K or plan.n != data.n:
        raise ConfigError("fold plan does not match the data or the nuisance list")
    out = {p: [] for p in pairs}
    order = []
    for k, ns in enumerate(nuisances):
        if ns.fold != k:
            raise ConfigError(f"nuisance set {k} was fit for fold {ns.fold}")
        idx = plan.test_index(k)
        order.append(idx)
        X, Y, Z = data.subset(idx)
        for p in pairs:
            out[p].append(arm_scores(X, Y, Z, ns, p[0], p[1], weight_clip_share))
    return {p: np.concatenate(v) for p, v in out.items()}, np.concatenate(order)


def summarize(target: str, scores: np.ndarray, gamma: float) -> BoundEstimate:
    value = float(np.mean(scores))
    se = float(np.sqrt(np.mean((scores - value) ** 2)))
    return BoundEstimate(target, value, se, int(scores.size), float(gamma), scores)


def combine(target: str, arm_score: dict, gamma: float) -> BoundEstimate:
    pairs, sign = _TARGET_PARTS[target]
    s = arm_score[pairs[0]].copy()
    for p in pairs[1:]:
        s = s + arm_score[p]
    return summarize(target, sign * s, gamma)


def estimate_bound(data: Dataset, plan: FoldPlan, nuisances: list, gamma: float, target: str,
                   weight_clip_share: float = 0.05) -> BoundEstimate:
    """Cross-fitted estimate of one target with its score standard deviation."""
    if target not in TARGETS:
        raise ConfigError(f"unknown target {target!r}")
    for ns in nuisances:
        if not math.isclose(ns.gamma, gamma):
            raise ConfigError(f"nuisances were fit at gamma={ns.gamma}, not {gamma}")
    pairs, _ = _TARGET_PARTS[target]
    scores, _ = bound_scores(data, plan, nuisances, weight_clip_share, pairs)
    return combine(target, scores, gamma)


def confidence_interval(tau_lower: BoundEstimate, tau_upper: BoundEstimate, alpha: float):
    """Two-sided interval ``[lo - z se_lo / sqrt(n), hi + z se_hi / sqrt(n)]``."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if tau_lower.n != tau_upper.n:
        raise ConfigError("lower and upper estimates come from different samples")
    z = normal_quantile(1 - alpha / 2)
    return (tau_lower.value - z * tau_lower.se / math.sqrt(tau_lower.n),
            tau_upper.value + z * tau_upper.se / math.sqrt(tau_upper.n))


# --------------------------------------------------------------------------- pipelines


def _row(data, plan, nsets, config) -> ReportRow:
    scores, _ = bound_scores(data, plan, nsets, config.weight_clip_share)
    lo = combine("tau_lower", scores, config.gamma)
    hi = combine("tau_upper", scores, config.gamma)
    ci = confidence_interval(lo, hi, config.alpha)
    return ReportRow(config.gamma, lo, hi, ci[0], ci[1], config.alpha)


def analyze(data: Dataset, config: AnalysisConfig, plan: FoldPlan | None = None,
            tuning: Tuning | None = None, threads: int = 1) -> ReportRow:
    """Bounds and confidence interval for the average effect at ``config.gamma``."""
    plan = plan or make_folds(data.n, config.folds, config.seed)
    nsets = cross_fit(data, plan, config, tuning, threads=threads)
    return _row(data, plan, nsets, config)


def gamma_sweep(data: Dataset, gammas, config: AnalysisConfig, threads: int = 1) -> SensitivityReport:
    """One report row per Gamma on a shared fold plan.

    Propensity and outcome-mean fits are made once and reused; theta and nu are
    refit for every Gamma.
    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ConfigError("need at least one gamma")
    if any(g < 1 for g in gammas) or gammas != sorted(gammas):
        raise ConfigError("gammas must be >= 1 and sorted ascending")
    plan = make_folds(data.n, config.folds, config.seed)
    rows, base = [], None
    for g in gammas:
        cfg = config.with_gamma(g)
        nsets = cross_fit(data, plan, cfg, select_tuning(data, cfg), base, threads=threads)
        base = base or nsets
        rows.append(_row(data, plan, nsets, cfg))
    prov = {"seed": config.seed, "config_hash": config.digest(), "n": data.n,
            "n_treated": data.n_treated, "folds": config.folds}
    return SensitivityReport(tuple(rows), prov)


def lower_bound_only(data: Dataset, config: AnalysisConfig, plan: FoldPlan | None = None) -> BoundEstimate:
    """``tau_lower`` alone, skipping the upper-bound fits (used by tests of the null)."""
    plan = plan or make_folds(data.n, config.folds, config.seed)
    nsets = cross_fit(data, plan, config, pairs=LOWER_PAIRS)
    scores, _ = bound_scores(data, plan, nsets, config.weight_clip_share, LOWER_PAIRS)
    return combine("tau_lower", scores, config.gamma)
