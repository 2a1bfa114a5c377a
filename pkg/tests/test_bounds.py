import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gammabounds.bounds import (
    BoundEstimate,
    analyze,
    arm_scores,
    bound_scores,
    cate_bounds_at,
    cate_bounds_from,
    clip_weights,
    confidence_interval,
    estimate_bound,
    gamma_sweep,
    normal_quantile,
    score_mu1_lower,
)
from gammabounds.data_model import AnalysisConfig, ConfigError, Dataset, make_folds
from gammabounds.nuisance import cross_fit
from gammabounds.simulation import SimConfig, TrueNuisances, generate_dataset, oracle_estimate, population_bounds

from conftest import synthetic


class ConstNuisance:
    """Constant nuisances for hand-checked scores."""

    def __init__(self, gamma, e1, theta, nu=1.0, fold=0):
        self.gamma, self._e1, self._theta, self._nu, self.fold = gamma, e1, theta, nu, fold

    def e1(self, X):
        return np.full(len(X), self._e1)

    def theta(self, arm, sign, X):
        return np.full(len(X), self._theta[(arm, sign)] if isinstance(self._theta, dict) else self._theta)

    def nu(self, arm, sign, X):
        return np.full(len(X), self._nu)


def est(value, se, n=100, target="tau_lower"):
    return BoundEstimate(target, value, se, n, 1.0, np.zeros(0))


def test_cate_arithmetic():
    lo, _ = cate_bounds_from(2.0, 0.0, 0.5, 1.0, 0.0)
    assert lo == pytest.approx(1.5)
    lo, _ = cate_bounds_from(2.0, 0.0, 1.0, -50.0, 0.0)
    assert lo == pytest.approx(2.0)


def test_cate_collapses_at_gamma_one():
    data = synthetic(n=300, d=2, seed=1)
    ns = cross_fit(data, make_folds(data.n, 5, 0), AnalysisConfig(gamma=1.0))[0]
    x = np.random.default_rng(0).random((20, 2))
    lo, hi = cate_bounds_at(x, ns)
    np.testing.assert_allclose(lo, ns.mu11(x) - ns.mu00(x), atol=1e-8)
    np.testing.assert_allclose(hi, lo, atol=1e-8)


def test_cate_ordering_above_one():
    data = synthetic(n=400, d=2, seed=2)
    ns = cross_fit(data, make_folds(data.n, 5, 0), AnalysisConfig(gamma=3.0))[0]
    lo, hi = cate_bounds_at(np.random.default_rng(1).random((50, 2)), ns)
    assert np.all(lo <= hi)
    with pytest.raises(ConfigError):
        cate_bounds_at(np.zeros(2), ns, gamma=2.0)


def test_score_examples():
    ns = ConstNuisance(2.0, 0.4, 1.3, nu=1.5)
    assert score_mu1_lower(5.0, 0, np.zeros(1), ns) == pytest.approx(1.3)
    assert score_mu1_lower(1.3, 1, np.zeros(1), ns) == pytest.approx(1.3)
    # z=1, y below theta: y + psi * e0/(nu e1) with psi = -G (theta - y)
    assert score_mu1_lower(1.0, 1, np.zeros(1), ns) == pytest.approx(1.0 - 2 * 0.3 * 0.6 / (1.5 * 0.4))


def test_score_is_aipw_at_gamma_one():
    ns = ConstNuisance(1.0, 0.25, 0.7)
    y = 2.0
    aipw = 0.7 + (y - 0.7) / 0.25
    assert score_mu1_lower(y, 1, np.zeros(1), ns) == pytest.approx(aipw)


def test_all_treated_with_zero_control_share():
    Y = np.array([1.0, 4.0, -2.0, 3.5])
    ns = ConstNuisance(2.0, 1.0, 10.0)
    s = arm_scores(np.zeros((4, 1)), Y, np.ones(4, int), ns, 1, 1, 1.0)
    assert s.mean() == pytest.approx(Y.mean())


def test_normal_quantile_accuracy():
    for p in np.concatenate([np.linspace(1e-6, 1 - 1e-6, 501), [1e-12, 0.975, 0.95]]):
        assert normal_quantile(p) == pytest.approx(stats.norm.ppf(p), abs=1e-9)
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)


def test_ci_examples():
    lo, hi = confidence_interval(est(1.0, 1.0), est(2.0, 1.0), 0.05)
    assert lo == pytest.approx(0.8040036, abs=5e-8)
    lo, hi = confidence_interval(est(1.0, 1.0), est(2.0, 1.0), 1 - 1e-12)
    assert lo == pytest.approx(1.0, abs=1e-9) and hi == pytest.approx(2.0, abs=1e-9)
    lo, hi = confidence_interval(est(1.5, 2.0), est(1.5, 2.0), 0.1)
    assert 1.5 - lo == pytest.approx(hi - 1.5)
    for a in (0.0, 1.0, -0.1):
        with pytest.raises(ConfigError):
            confidence_interval(est(1, 1), est(1, 1), a)


def test_clip_weights_cap():
    w = np.array([100.0] + [1.0] * 99)
    out = clip_weights(w, 0.05)
    assert out.max() == pytest.approx(0.05 * out.sum())
    np.testing.assert_array_equal(out[1:], 1.0)
    np.testing.assert_array_equal(clip_weights(w, 1.0), w)
    np.testing.assert_array_equal(clip_weights(np.ones(10), 0.05), 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=200), st.floats(0.01, 0.5))
def test_clip_weights_invariants(w, share):
    w = np.array(w)
    out = clip_weights(w, share)
    assert np.all(out <= w + 1e-12)
    o = np.argsort(w, kind="stable")
    assert np.all(np.diff(out[o]) >= 0)
    if w.size * share > 1:
        assert out.max() <= share * out.sum() * (1 + 1e-9) + 1e-300


def test_score_centering_and_fold_order():
    data = synthetic(n=300, d=2, seed=3)
    plan = make_folds(data.n, 5, 1)
    config = AnalysisConfig(gamma=2.0)
    nsets = cross_fit(data, plan, config)
    b = estimate_bound(data, plan, nsets, 2.0, "tau_lower")
    assert b.value == np.mean(b.scores)
    assert b.se ** 2 == pytest.approx(np.mean((b.scores - b.value) ** 2), rel=1e-14)
    _, order = bound_scores(data, plan, nsets, 0.05)
    np.testing.assert_array_equal(order, np.concatenate([plan.test_index(k) for k in range(5)]))
    with pytest.raises(ConfigError):
        estimate_bound(data, make_folds(data.n, 4, 1), nsets, 2.0, "tau_lower")
    with pytest.raises(ConfigError):
        estimate_bound(data, plan, nsets, 3.0, "tau_lower")


def test_all_targets_consistent():
    data = synthetic(n=300, d=2, seed=4)
    plan = make_folds(data.n, 5, 0)
    nsets = cross_fit(data, plan, AnalysisConfig(gamma=2.0))
    e = {t: estimate_bound(data, plan, nsets, 2.0, t).value
         for t in ("mu1_lower", "mu1_upper", "mu0_lower", "mu0_upper", "tau_lower", "tau_upper")}
    assert e["tau_lower"] == pytest.approx(e["mu1_lower"] - e["mu0_upper"])
    assert e["tau_upper"] == pytest.approx(e["mu1_upper"] - e["mu0_lower"])
    assert e["mu1_lower"] <= e["mu1_upper"] and e["mu0_lower"] <= e["mu0_upper"]


def test_determinism():
    data = synthetic(n=300, d=2, seed=5)
    a = analyze(data, AnalysisConfig(gamma=2.0, seed=7))
    b = analyze(data, AnalysisConfig(gamma=2.0, seed=7), threads=3)
    assert a.tau_lower.value == b.tau_lower.value and a.tau_upper.se == b.tau_upper.se
    np.testing.assert_array_equal(a.tau_lower.scores, b.tau_lower.scores)


def test_sweep_single_gamma_and_validation():
    data = synthetic(n=300, d=2, seed=6)
    rep = gamma_sweep(data, [1.0], AnalysisConfig())
    assert len(rep.rows) == 1
    r = rep.rows[0]
    assert r.tau_lower.value == pytest.approx(r.tau_upper.value, abs=1e-8)
    assert r.ci_low <= r.ci_high
    assert len(rep.plot_series()) == 4
    for bad in ([], [0.5, 1.0], [2.0, 1.0]):
        with pytest.raises(ConfigError):
            gamma_sweep(data, bad, AnalysisConfig())


def test_sweep_ci_identity():
    data = synthetic(n=300, d=2, seed=7)
    rep = gamma_sweep(data, [1.0, math.e], AnalysisConfig())
    z = normal_quantile(0.975)
    for r in rep.rows:
        assert r.ci_low == r.tau_lower.value - z * r.tau_lower.se / math.sqrt(r.tau_lower.n)
        assert r.ci_high == r.tau_upper.value + z * r.tau_upper.se / math.sqrt(r.tau_upper.n)
        assert r.ci_low <= r.ci_high


@pytest.mark.slow
def test_true_nuisance_oracle_within_three_se():
    sim = SimConfig.preset("d4", n=20000)
    truth = TrueNuisances(sim)
    target = population_bounds(sim, m=16)["mu1_lower"]
    b = oracle_estimate(generate_dataset(sim, 0), truth, "mu1_lower")
    assert abs(b.value - target) <= 3 * b.se / math.sqrt(b.n)


@pytest.mark.slow
def test_sweep_monotone_on_average():
    lo, hi = np.zeros(2), np.zeros(2)
    for seed in range(50):
        data = generate_dataset(SimConfig.preset("d4", n=1600, seed=seed), 0)
        rep = gamma_sweep(data, [1.0, math.e], AnalysisConfig(seed=seed))
        lo += [r.tau_lower.value for r in rep.rows]
        hi += [r.tau_upper.value for r in rep.rows]
    assert lo[1] <= lo[0] and hi[1] >= hi[0]


@pytest.mark.slow
def test_population_scale_validity():
    sim = SimConfig.preset("d4", n=20000, replications=20)
    for i in range(20):
        data = generate_dataset(sim, i)
        r = analyze(data, AnalysisConfig(gamma=sim.gamma_gen, seed=i))
        rt = math.sqrt(data.n)
        assert r.tau_lower.value - 3 * r.tau_lower.se / rt <= 1.0 <= r.tau_upper.value + 3 * r.tau_upper.se / rt
