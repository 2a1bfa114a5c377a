"""Confounded data-generating process and Monte Carlo coverage studies.

Draw ``X ~ U[0,1]^d``, ``U | X ~ N(0, s(x)^2)`` with ``s(x) = 1 + sin(2.5 x_1)/2``,
``Y(0) = beta'x + U``, ``Y(1) = tau + Y(0)`` and
``Z ~ Bernoulli(expit(alpha0 + mu'x + log(G) 1{U > 0}))``.  The odds of
treatment differ by exactly ``G`` across the sign of ``U``, so the law satisfies
the Gamma-selection condition with equality.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit, ndtr
from scipy.stats import qmc

from .bounds import analyze, arm_scores, combine
from .data_model import AnalysisConfig, ConfigError, Dataset

BETA4 = (0.513, 0.045, 0.700, 0.646)
MU4 = (0.709, 0.438, 0.200, 0.767)
# Extra coordinates for d = 8: np.random.default_rng(20240801).uniform(size=8), rounded.
BETA8 = BETA4 + (0.978, 0.476, 0.220, 0.985)
MU8 = MU4 + (0.137, 0.979, 0.170, 0.279)

# Intercepts calibrated by ``calibrate_alpha0`` (seed 0, 1e5 draws) for the presets.
D4_ALPHA0 = -1.5539
D8_ALPHA0 = -3.793

_SQRT2PI = math.sqrt(2 * math.pi)

#: ``heteroskedastic`` is the generator described above; ``unit`` replaces the
#: noise scale by 1 and is offered for comparison runs only.
NOISE_MODELS = ("heteroskedastic", "unit")


@dataclass(frozen=True)
class SimConfig:
    n: int = 800
    d: int = 4
    tau: float = 1.0
    gamma_gen: float = math.e
    beta: tuple = BETA4
    mu_vec: tuple = MU4
    alpha0: float | None = None
    target_share: float | None = 0.5
    seed: int = 0
    replications: int = 200
    noise: str = "heteroskedastic"

    def __post_init__(self):
        if self.noise not in NOISE_MODELS:
            raise ConfigError(f"noise must be one of {NOISE_MODELS}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "mu_vec", tuple(float(m) for m in self.mu_vec))
        if self.n < 2 or self.d < 1:
            raise ConfigError("need n >= 2 and d >= 1")
        if len(self.beta) != self.d or len(self.mu_vec) != self.d:
            raise ConfigError(f"beta and mu_vec must have length d={self.d}")
        if not self.gamma_gen >= 1:
            raise ConfigError("gamma_gen must be >= 1")
        if (self.alpha0 is None) == (self.target_share is None):
            raise ConfigError("set exactly one of alpha0 and target_share")
        if self.target_share is not None and not 0.05 < self.target_share < 0.95:
            raise ConfigError("target_share must lie in (0.05, 0.95)")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")

    @classmethod
    def preset(cls, name: str, **overrides) -> "SimConfig":
        """``d4`` (d=4, share 1/2) or ``d8`` (d=8, n=1100, share 0.21), alpha0 frozen."""
        if name == "d4":
            base = dict(n=800, d=4, beta=BETA4, mu_vec=MU4, alpha0=D4_ALPHA0, target_share=None)
        elif name == "d8":
            base = dict(n=1100, d=8, beta=BETA8, mu_vec=MU8, alpha0=D8_ALPHA0, target_share=None)
        else:
            raise ConfigError(f"unknown preset {name!r}")
        base.update(overrides)
        if "target_share" in overrides and overrides["target_share"] is not None:
            base["alpha0"] = None
        return cls(**base)

    def resolved(self) -> "SimConfig":
        """Copy with ``alpha0`` filled in by calibration if only a share was given."""
        if self.alpha0 is not None:
            return self
        return replace(self, alpha0=calibrate_alpha0(self), target_share=None)


def noise_scale(x1, model: str = "heteroskedastic"):
    x1 = np.asarray(x1, dtype=float)
    if model == "unit":
        return np.ones_like(x1)
    return 1.0 + 0.5 * np.sin(2.5 * x1)


def treatment_logit(config: SimConfig, x, u, alpha0: float | None = None):
    """Log-odds of treatment given covariates and the hidden confounder."""
    a0 = config.alpha0 if alpha0 is None else alpha0
    x = np.asarray(x, dtype=float)
    return a0 + x @ np.asarray(config.mu_vec) + math.log(config.gamma_gen) * (np.asarray(u) > 0)


def _draw(config: SimConfig, n: int, rng: np.random.Generator, alpha0: float):
    x = rng.random((n, config.d))
    u = noise_scale(x[:, 0], config.noise) * rng.standard_normal(n)
    z = (rng.random(n) < expit(treatment_logit(config, x, u, alpha0))).astype(np.int8)
    return x, u, z


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_dataset(config: SimConfig, replication_index: int = 0, diagnostics: bool = False):
    """Observed ``(X, Y(Z), Z)`` for one replication.

    With ``diagnostics=True`` also returns ``{"u", "y0", "y1"}``; the dataset
    itself never carries the hidden confounder.
    """
    if config.alpha0 is None:
        config = config.resolved()
    rng = replication_rng(config.seed, replication_index)
    x, u, z = _draw(config, config.n, rng, config.alpha0)
    y0 = x @ np.asarray(config.beta) + u
    y1 = config.tau + y0
    data = Dataset(x, np.where(z == 1, y1, y0), z)
    if diagnostics:
        return data, {"u": u, "y0": y0, "y1": y1}
    return data


def calibrate_alpha0(config: SimConfig, draws: int = 100_000, seed: int = 0, tol: float = 1e-4) -> float:
    """Intercept making the Monte Carlo treated share match ``config.target_share``.

    Uses one fixed batch of ``draws`` covariate/noise samples, so the share is a
    monotone function of the intercept and plain bisection applies.  The result
    is rounded to 4 decimals.
    """
    if config.target_share is None:
        raise ConfigError("calibration needs target_share")
    rng = np.random.default_rng(seed)
    x = rng.random((draws, config.d))
    u = noise_scale(x[:, 0], config.noise) * rng.standard_normal(draws)
    v = rng.random(draws)
    target = config.target_share

    def share(a):
        return float(np.mean(v < expit(treatment_logit(config, x, u, a))))

    lo, hi = -20.0, 20.0
    if not share(lo) < target < share(hi):
        raise ConfigError("could not bracket the target share")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if share(mid) < target:
            lo = mid
        else:
            hi = mid
    a0 = round(0.5 * (lo + hi), 4)
    if abs(share(a0) - target) > 0.005:
        raise ConfigError("calibrated share misses the target by more than 0.005")
    return a0


# --------------------------------------------------------------------------- true nuisances


def _half_moments(lo, hi, s):
    """``P(lo < U < hi)`` and ``E[U; lo < U < hi]`` for ``U ~ N(0, s^2)``."""
    a, b = lo / s, hi / s
    m0 = ndtr(b) - ndtr(a)
    m1 = s * (np.exp(-0.5 * a * a) - np.exp(-0.5 * b * b)) / _SQRT2PI
    return m0, m1


def _mixture_parts(c, s, wpos, wneg):
    """For ``V`` with density ``2 phi_s(v) (wpos 1{v>0} + wneg 1{v<=0})``:
    ``P(V < c)``, ``E[V; V < c]`` and ``E[V]``.
    """
    inf = np.full_like(c, np.inf)
    zero = np.zeros_like(c)
    c_neg = np.minimum(c, 0.0)
    c_pos = np.maximum(c, 0.0)
    p_a, m_a = _half_moments(-inf, c_neg, s)  # below c on the negative half
    p_b, m_b = _half_moments(zero, c_pos, s)  # below c on the positive half
    below_p = 2 * (wneg * p_a + wpos * p_b)
    below_m = 2 * (wneg * m_a + wpos * m_b)
    mean = 2 * s / _SQRT2PI * (wpos - wneg)
    return below_p, below_m, mean


def mixture_root(s, wpos, wneg, gamma: float, iters: int = 200):
    """Vectorized root ``c`` of ``E[(V-c)_+] = G E[(c-V)_+]`` by bisection."""
    s = np.asarray(s, dtype=float)
    wpos, wneg = np.broadcast_arrays(np.asarray(wpos, float), np.asarray(wneg, float))
    lo = -12.0 * s
    hi = 12.0 * s
    for _ in range(iters):
        c = 0.5 * (lo + hi)
        pb, mb, mean = _mixture_parts(c, s, wpos, wneg)
        # E[(V-c)_+] - G E[(c-V)_+] with E[(V-c)_+] = (mean - mb) - c (1 - pb)
        up = (mean - mb) - c * (1 - pb)
        down = c * pb - mb
        f = up - gamma * down
        lo = np.where(f > 0, c, lo)
        hi = np.where(f > 0, hi, c)
        if np.all(hi - lo <= 1e-13 * np.maximum(1.0, np.abs(c))):
            break
    return 0.5 * (lo + hi)


class TrueNuisances:
    """Closed-form nuisances of the generator, usable in place of fitted ones."""

    fold = 0

    def __init__(self, config: SimConfig, gamma: float | None = None):
        self.config = config.resolved()
        self.gamma = float(self.config.gamma_gen if gamma is None else gamma)

    def _e(self, X):
        c = self.config
        lin = c.alpha0 + np.asarray(X) @ np.asarray(c.mu_vec)
        return expit(lin + math.log(c.gamma_gen)), expit(lin)

    def e1(self, X):
        ep, em = self._e(X)
        return 0.5 * (ep + em)

    def _arm_law(self, arm, sign, X):
        ep, em = self._e(X)
        wp, wm = (ep, em) if arm == 1 else (1 - ep, 1 - em)
        tot = wp + wm
        wp, wm = wp / tot, wm / tot
        if sign < 0:
            wp, wm = wm, wp
        s = noise_scale(np.asarray(X)[:, 0], self.config.noise)
        shift = sign * ((self.config.tau if arm == 1 else 0.0) + np.asarray(X) @ np.asarray(self.config.beta))
        return s, wp, wm, shift

    def theta(self, arm, sign, X):
        s, wp, wm, shift = self._arm_law(arm, sign, X)
        return shift + mixture_root(s, wp, wm, self.gamma)

    def nu(self, arm, sign, X):
        s, wp, wm, _ = self._arm_law(arm, sign, X)
        c = mixture_root(s, wp, wm, self.gamma)
        pb, _, _ = _mixture_parts(c, s, wp, wm)
        return 1.0 + (self.gamma - 1.0) * pb

    def arm_mean(self, arm, sign, X):
        """``E[s Y(arm) | Z = arm, X]``."""
        s, wp, wm, shift = self._arm_law(arm, sign, X)
        return shift + 2 * s / _SQRT2PI * (wp - wm)

    def mu(self, arm, X):
        return self.arm_mean(arm, 1, X)


def population_bounds(config: SimConfig, gamma: float | None = None, m: int = 14, seed: int = 0) -> dict:
    """Population effect bounds by scrambled-Sobol integration over ``2**m`` covariate points."""
    tn = TrueNuisances(config, gamma)
    X = qmc.Sobol(config.d, scramble=True, seed=seed).random_base2(m)
    e1 = tn.e1(X)
    ea = {1: e1, 0: 1 - e1}
    lb = {}
    for arm, sign in ((1, 1), (0, -1), (1, -1), (0, 1)):
        lb[(arm, sign)] = float(np.mean(ea[arm] * tn.arm_mean(arm, sign, X)
                                        + (1 - ea[arm]) * tn.theta(arm, sign, X)))
    return {
        "mu1_lower": lb[(1, 1)], "mu0_upper": -lb[(0, -1)],
        "mu1_upper": -lb[(1, -1)], "mu0_lower": lb[(0, 1)],
        "tau_lower": lb[(1, 1)] + lb[(0, -1)],
        "tau_upper": -(lb[(1, -1)] + lb[(0, 1)]),
    }


def oracle_estimate(data: Dataset, truth: TrueNuisances, target: str = "mu1_lower",
                    weight_clip_share: float = 1.0):
    """Bound estimate with the true nuisances plugged into the scores."""
    X, Y, Z = data.covariates, data.outcomes, data.treatments
    pairs = {(1, 1), (0, -1), (1, -1), (0, 1)}
    scores = {p: arm_scores(X, Y, Z, truth, p[0], p[1], weight_clip_share) for p in pairs}
    return combine(target, scores, truth.gamma)


# --------------------------------------------------------------------------- Monte Carlo


class ReplicationError(RuntimeError):
    def __init__(self, index: int, seed: int, cause: BaseException):
        super().__init__(f"replication {index} (seed {seed}) failed: {cause!r}")
        self.index = index
        self.seed = seed


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    tau_lower: float
    se_lower: float
    tau_upper: float
    se_upper: float
    ci_low: float
    ci_high: float
    covered: bool


@dataclass(frozen=True)
class MonteCarloSummary:
    """Averages over replications; standard errors are on the estimator scale (se / sqrt(n))."""

    n: int
    replications: int
    mean_lower: float
    mean_se_lower: float
    sd_lower: float
    mean_upper: float
    mean_se_upper: float
    sd_upper: float
    coverage: float
    results: tuple = field(default=(), repr=False)

    COLUMNS = ("n", "mean_lower", "mean_se_lower", "sd_lower",
               "mean_upper", "mean_se_upper", "sd_upper", "coverage", "replications")

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.COLUMNS}


def _one_replication(args) -> ReplicationResult:
    sim, analysis, index = args
    try:
        data = generate_dataset(sim, index)
        cfg = replace(analysis, seed=int(np.random.SeedSequence([analysis.seed, index]).generate_state(1)[0]))
        r = analyze(data, cfg)
    except Exception as exc:  # noqa: BLE001 - re-raised with the replication seed
        raise ReplicationError(index, sim.seed, exc) from exc
    rt = math.sqrt(data.n)
    return ReplicationResult(index, r.tau_lower.value, r.tau_lower.se / rt, r.tau_upper.value,
                             r.tau_upper.se / rt, r.ci_low, r.ci_high,
                             bool(r.ci_low <= sim.tau <= r.ci_high))


def summarize_replications(n: int, results) -> MonteCarloSummary:
    results = tuple(sorted(results, key=lambda r: r.index))
    lo = np.array([r.tau_lower for r in results])
    hi = np.array([r.tau_upper for r in results])
    ddof_ok = len(results) > 1
    return MonteCarloSummary(
        n=n,
        replications=len(results),
        mean_lower=float(lo.mean()),
        mean_se_lower=float(np.mean([r.se_lower for r in results])),
        sd_lower=float(lo.std(ddof=1)) if ddof_ok else math.nan,
        mean_upper=float(hi.mean()),
        mean_se_upper=float(np.mean([r.se_upper for r in results])),
        sd_upper=float(hi.std(ddof=1)) if ddof_ok else math.nan,
        coverage=float(np.mean([r.covered for r in results])),
        results=results,
    )


def run_monte_carlo(config: SimConfig, analysis: AnalysisConfig, workers: int | None = None,
                    chunksize: int = 4) -> MonteCarloSummary:
    """Generate and analyze ``config.replications`` datasets.

    Replication ``i`` draws data from ``SeedSequence([seed, i])``; results are
    aggregated in index order, so the summary does not depend on ``workers``.
    """
    sim = config.resolved()
    jobs = [(sim, analysis, i) for i in range(sim.replications)]
    workers = workers or 1
    if workers > 1:
        with ProcessPoolExecutor(min(workers, os.cpu_count() or 1)) as ex:
            results = list(ex.map(_one_replication, jobs, chunksize=chunksize))
    else:
        results = [_one_replication(j) for j in jobs]
    return summarize_replications(sim.n, results)
