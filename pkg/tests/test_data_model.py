import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammabounds.data_model import (
    AnalysisConfig,
    ConfigError,
    DataError,
    Dataset,
    SieveSettings,
    load_csv,
    make_folds,
    minmax_rescale,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_small_file(tmp_path):
    p = write(tmp_path, "y,z,x\n1.0,0,0.1\n2.0,1,0.2\n3.0,0,0.3\n4.0,1,0.4\n")
    d = load_csv(p, "y", "z", rescale=False)
    assert (d.n, d.d) == (4, 1)
    assert d.covariate_names == ("x",)
    np.testing.assert_array_equal(d.treatments, [0, 1, 0, 1])


def test_invalid_treatment_names_row(tmp_path):
    p = write(tmp_path, "y,z,x\n1,0,0\n2,1,0\n3,2,0\n")
    with pytest.raises(DataError, match="invalid treatment at row 3"):
        load_csv(p, "y", "z")


def test_rescaling_maps_range_to_unit_interval(tmp_path):
    p = write(tmp_path, "y,z,x\n1,0,10\n2,1,30\n3,0,20\n4,1,15\n")
    d = load_csv(p, "y", "z")
    x = d.covariates[:, 0]
    assert x.min() == 0.0 and x.max() == 1.0
    np.testing.assert_allclose(d.unscale(d.covariates)[:, 0], [10, 30, 20, 15], atol=1e-12)


@pytest.mark.parametrize("text,msg", [
    ("y,z\n1,0\n2,1\n", "missing column 'x'"),
    ("y,z,x\n1,0,a\n2,1,0\n", "non-numeric value 'a' at row 1"),
    ("y,z,x\n1,0,\n2,1,0\n", "missing value at row 1"),
    ("y,z,x\n1,1,0\n2,1,0\n", "both treatment arms"),
])
def test_load_errors(tmp_path, text, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(write(tmp_path, text), "y", "z", ["x"])


def test_quoted_treatment_strings(tmp_path):
    d = load_csv(write(tmp_path, 'y,z,x\n1,"0",1\n2,"1",2\n'), "y", "z")
    np.testing.assert_array_equal(d.treatments, [0, 1])


def test_dataset_is_read_only():
    d = Dataset(np.zeros((3, 1)), [1.0, 2.0, 3.0], [0, 1, 0])
    with pytest.raises(ValueError):
        d.outcomes[0] = 5.0
    with pytest.raises(Exception):
        d.outcomes = np.zeros(3)


def test_dataset_rejects_nonfinite_and_mismatch():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), [1.0, np.nan, 3.0], [0, 1, 0])
    with pytest.raises(DataError):
        Dataset(np.zeros((4, 1)), [1.0, 2.0, 3.0], [0, 1, 0])


def test_make_folds_sizes():
    assert sorted(make_folds(10, 5, 3).sizes()) == [2] * 5
    assert sorted(make_folds(11, 5, 3).sizes()) == [2, 2, 2, 2, 3]


def test_make_folds_deterministic_and_seed_sensitive():
    a, b = make_folds(100, 5, 42), make_folds(100, 5, 42)
    np.testing.assert_array_equal(a.assignments, b.assignments)
    assert not np.array_equal(a.assignments, make_folds(100, 5, 43).assignments)


@pytest.mark.parametrize("n,K", [(5, 6), (5, 1)])
def test_make_folds_bad_K(n, K):
    with pytest.raises(ConfigError):
        make_folds(n, K, 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 1000), K=st.integers(2, 20), seed=st.integers(0, 2**63 - 1))
def test_folds_partition(n, K, seed):
    if K > n:
        return
    plan = make_folds(n, K, seed)
    union = np.concatenate([plan.test_index(k) for k in range(K)])
    np.testing.assert_array_equal(np.sort(union), np.arange(n))
    sizes = plan.sizes()
    assert sizes.max() - sizes.min() <= 1
    for k in range(K):
        assert np.intersect1d(plan.test_index(k), plan.train_index(k)).size == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
def test_rescale_round_trip(vals):
    x = np.array(vals).reshape(-1, 1)
    scaled, lo, span = minmax_rescale(x)
    d = Dataset(scaled, np.zeros(len(vals)), [0, 1] * (len(vals) // 2) + [0] * (len(vals) % 2),
                scale_min=lo, scale_span=span)
    np.testing.assert_allclose(d.unscale(d.scale(x)), x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))


@pytest.mark.parametrize("kw", [dict(gamma=0.5), dict(alpha=1.0), dict(alpha=0.0),
                                dict(propensity_clip=0.5), dict(folds=1), dict(weight_clip_share=0.0)])
def test_analysis_config_validation(kw):
    with pytest.raises(ConfigError):
        AnalysisConfig(**kw)


def test_sieve_settings_validation():
    with pytest.raises(ConfigError):
        SieveSettings(ridge="auto")
    with pytest.raises(ConfigError):
        SieveSettings(kind="wavelet")


def test_config_digest_ignores_gamma():
    a = AnalysisConfig(gamma=1.0)
    assert a.digest() == a.with_gamma(3.0).digest()
    assert a.digest() != AnalysisConfig(folds=3).digest()
