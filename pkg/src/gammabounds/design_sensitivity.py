"""Level-alpha test of the confounded null, design sensitivity, and the adversarial null.

The test rejects ``H0(G): tau <= 0 for some law compatible with G`` when the
cross-fitted lower bound is significantly positive.  Its design sensitivity
against a fixed alternative ``Q`` is the ``G`` at which the population lower
bound ``tau_minus(G)`` crosses zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special, stats

from .bounds import BoundEstimate, normal_quantile
from .data_model import ConfigError, Dataset
from .gamma_loss import DomainError, SortedSample

GAMMA_MAX = math.exp(6.0)


@dataclass(frozen=True)
class GaussianAlternative:
    """``Y(1) ~ N(tau/2, sigma^2)``, ``Y(0) ~ N(-tau/2, sigma^2)``, ``Z ~ Bernoulli(share)``."""

    tau: float
    sigma: float
    share: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not 0 < self.share < 1:
            raise DomainError("treatment share must lie in (0, 1)")

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        """Randomized-experiment draws as a covariate-free :class:`Dataset`."""
        z = (rng.random(n) < self.share).astype(np.int8)
        eps = rng.standard_normal(n)
        y = np.where(z == 1, self.tau / 2, -self.tau / 2) + self.sigma * eps
        return Dataset(np.empty((n, 0)), y, z)

    def empirical(self, n: int, rng: np.random.Generator) -> "EmpiricalAlternative":
        y1 = self.tau / 2 + self.sigma * rng.standard_normal(n)
        y0 = -self.tau / 2 + self.sigma * rng.standard_normal(n)
        return EmpiricalAlternative(y1, y0, self.share)


@dataclass(frozen=True, eq=False)
class EmpiricalAlternative:
    """Samples of each potential outcome under randomization plus the treated share."""

    y1: np.ndarray
    y0: np.ndarray
    share: float = 0.5

    def __post_init__(self):
        y1 = np.asarray(self.y1, dtype=float).ravel()
        y0 = np.asarray(self.y0, dtype=float).ravel()
        if y1.size == 0 or y0.size == 0:
            raise DomainError("both outcome samples must be nonempty")
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y0))):
            raise DomainError("outcome samples must be finite")
        if not 0 < self.share < 1:
            raise DomainError("treatment share must lie in (0, 1)")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "_s1", SortedSample(y1))
        object.__setattr__(self, "_s0", SortedSample(y0))

    def tau_minus(self, gamma: float) -> float:
        """Population lower bound ``E[Z Y1 + (1-Z) theta1 - (1-Z) Y0 - Z theta0]``."""
        a = self.share
        t1 = self._s1.root(gamma)
        t0 = self._s0.root(1.0 / gamma)
        return a * self.y1.mean() + (1 - a) * t1 - (1 - a) * self.y0.mean() - a * t0


@dataclass(frozen=True)
class DesignSensitivityResult:
    gamma_design: float
    diagnostics: dict = field(default_factory=dict)


def reject_null(tau_lower: BoundEstimate, alpha: float) -> bool:
    """True iff ``tau_lower > z_{1-alpha} * se / sqrt(n)`` (strict)."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return bool(tau_lower.value > normal_quantile(1 - alpha) * tau_lower.se / math.sqrt(tau_lower.n))


def _phi(t):
    return math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)


def gaussian_design_ratio(t: float) -> float:
    """``(phi(t) + t Phi(t)) / (phi(t) - t Phi(-t))`` for ``t = tau / sigma >= 0``.

    Written as ``(1 + t Phi(t)/phi(t)) / (1 - t R(t))`` with Mills ratio
    ``R(t) = Phi(-t)/phi(t)`` via ``erfcx``, so it stays accurate for large
    ``t``; the denominator is positive for every finite ``t``.
    """
    if t <= 0:
        return 1.0
    mills = math.sqrt(math.pi / 2) * special.erfcx(t / math.sqrt(2))
    denom = 1.0 - t * mills
    if t > 8:
        # asymptotic series avoids cancellation: 1 - t R(t) = 1/t^2 - 3/t^4 + 15/t^6 - ...
        s, term = 0.0, 1.0 / (t * t)
        for k in range(1, 12):
            s += term
            term *= -(2 * k + 1) / (t * t)
        denom = s
    dens = _phi(t)
    if dens == 0.0:
        return math.inf
    return (1.0 + t * float(special.ndtr(t)) / dens) / denom


def gamma_design_gaussian(tau: float, sigma: float) -> DesignSensitivityResult:
    """Closed-form design sensitivity for the Gaussian alternative; 1 when ``tau <= 0``."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    t = tau / sigma
    if t <= 0:
        return DesignSensitivityResult(1.0, {"t": t, "method": "closed_form"})
    return DesignSensitivityResult(float(gaussian_design_ratio(t)), {"t": t, "method": "closed_form"})


def gamma_design_gaussian_quadrature(tau: float, sigma: float) -> float:
    """The same ratio of half-line integrals evaluated by adaptive quadrature."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if tau <= 0:
        return 1.0

    def f(y):
        return y * math.exp(-((y - tau) ** 2) / (2 * sigma * sigma))

    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)
    num = integrate.quad(f, 0, math.inf, **opts)[0]
    den = integrate.quad(f, -math.inf, 0, **opts)[0]
    return float(-num / den)


def gamma_design_empirical(alt: EmpiricalAlternative, tol: float = 1e-8,
                           gamma_max: float = GAMMA_MAX, max_iter: int = 500) -> DesignSensitivityResult:
    """Solve ``tau_minus(G) = 0`` by bisection on ``[1, gamma_max]``.

    ``tau_minus`` is continuous and decreasing in ``G``.  Returns 1 when
    ``tau_minus(1) <= 0`` and infinity when ``tau_minus(gamma_max) > 0``.
    """
    f1 = alt.tau_minus(1.0)
    if f1 <= 0:
        return DesignSensitivityResult(1.0, {"tau_minus_at_1": f1, "iterations": 0})
    fmax = alt.tau_minus(gamma_max)
    if fmax > 0:
        return DesignSensitivityResult(math.inf, {"tau_minus_at_max": fmax, "gamma_max": gamma_max,
                                                  "iterations": 0})
    lo, hi = 1.0, gamma_max
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        fm = alt.tau_minus(mid)
        if fm > 0:
            lo = mid
        else:
            hi = mid
        if (hi - lo <= tol and abs(fm) <= tol) or hi - lo <= 4 * np.spacing(hi):
            return DesignSensitivityResult(mid, {"bracket": (lo, hi), "iterations": it, "residual": fm})
    raise RuntimeError(f"bisection did not reach tolerance; bracket ({lo}, {hi})")


# --------------------------------------------------------------------------- adversarial null


def gaussian_theta(mean: float, sigma: float, gamma: float) -> float:
    """Population root of ``E[(Y-t)_+] = G E[(t-Y)_+]`` for ``Y ~ N(mean, sigma^2)``."""

    def h(t):
        d = (mean - t) / sigma
        up = sigma * (_phi(d) + d * special.ndtr(d))
        down = sigma * (_phi(d) - d * special.ndtr(-d))
        return up - gamma * down

    span = 40.0 * sigma
    return optimize.brentq(h, mean - span, mean + span, xtol=1e-14, rtol=4 * np.finfo(float).eps)


class AdversarialNullSampler:
    """Tilted law built to look like the Gaussian alternative while having ``tau <= 0``.

    ``Y(1)`` has density proportional to ``(1{t > t*} + sqrt(G) 1{t <= t*}) q1(t)``
    where ``t*`` is the treated-arm theta of the alternative at level ``G``;
    ``Y(0) = -Y(1)``; ``U = 1{Y(1) > t*}``; and
    ``P(Z = 1 | U = u)`` is ``sqrt(G)/(1+sqrt(G))`` for ``u = 1`` and
    ``1/(1+sqrt(G))`` for ``u = 0``.
    """

    def __init__(self, alt: GaussianAlternative, gamma: float):
        if gamma < 1:
            raise DomainError("gamma must be >= 1")
        self.alt = alt
        self.gamma = float(gamma)
        self.mean1 = alt.tau / 2
        self.t_star = gaussian_theta(self.mean1, alt.sigma, self.gamma)
        r = math.sqrt(self.gamma)
        q_below = stats.norm.cdf(self.t_star, self.mean1, alt.sigma)
        self._q_below = q_below
        self.p_u1 = (1 - q_below) / ((1 - q_below) + r * q_below)
        self.z_given_u1 = r / (1 + r)
        self.z_given_u0 = 1 / (1 + r)
        self.share = self.z_given_u1 * self.p_u1 + self.z_given_u0 * (1 - self.p_u1)

    def sample_full(self, n: int, rng: np.random.Generator) -> dict:
        """Draw ``(Y1, Y0, U, Z)``; ``Y1`` by inverse CDF on the two half-lines."""
        u = rng.random(n) < self.p_u1
        v = rng.random(n)
        qb = self._q_below
        prob = np.where(u, qb + v * (1 - qb), v * qb)
        y1 = stats.norm.ppf(prob, self.mean1, self.alt.sigma)
        pz = np.where(u, self.z_given_u1, self.z_given_u0)
        z = (rng.random(n) < pz).astype(np.int8)
        return {"y1": y1, "y0": -y1, "u": u.astype(np.int8), "z": z}

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        d = self.sample_full(n, rng)
        return Dataset(np.empty((n, 0)), np.where(d["z"] == 1, d["y1"], d["y0"]), d["z"])

    def reference(self) -> GaussianAlternative:
        """The alternative with the treated share this law induces."""
        return GaussianAlternative(self.alt.tau, self.alt.sigma, self.share)


def adversarial_null_sampler(alt: GaussianAlternative, gamma: float) -> AdversarialNullSampler:
    return AdversarialNullSampler(alt, gamma)
