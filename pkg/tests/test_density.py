import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from insider_stream.density import (
    MAX_CATEGORICAL_NLL,
    AnomalyRecord,
    DistributionParams,
    anomaly,
    categorical_nll,
    gaussian_nll,
    top_contributors,
)
from insider_stream.features import UserDayVector


def normal_nll_oracle(x, mu, var):
    """-log of the normal density, evaluated directly from the pdf."""
    pdf = math.exp(-(x - mu) ** 2 / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return -math.log(pdf)


# (x, mu, log_var or None, frozen value)
NLL_CASES = [
    ([0.0, 0.0], [0.0, 0.0], None, 1.8378770664093453),
    ([1.0], [0.0], None, 1.4189385332046727),
    ([2.0], [0.0], [math.log(4.0)], 2.112085713764618),
]


@pytest.mark.parametrize("x, mu, log_var, frozen", NLL_CASES)
def test_gaussian_nll_examples(x, mu, log_var, frozen):
    dp = DistributionParams(np.array(mu), None if log_var is None else np.array(log_var))
    total, _ = gaussian_nll(np.array(x), dp)
    var = [1.0] * len(x) if log_var is None else [math.exp(v) for v in log_var]
    oracle = sum(normal_nll_oracle(a, b, v) for a, b, v in zip(x, mu, var))
    assert abs(total - oracle) < 1e-9
    assert abs(total - frozen) < 1e-9


def test_identity_nll_offset_is_constant():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 20))
        x, mu = rng.normal(size=d) * 5, rng.normal(size=d) * 5
        total, _ = gaussian_nll(x, DistributionParams(mu))
        assert abs(total - 0.5 * np.sum((x - mu) ** 2) - 0.5 * d * math.log(2 * math.pi)) < 1e-9


def test_shape_mismatch_and_non_finite_rejected():
    with pytest.raises(ValueError):
        gaussian_nll(np.zeros(3), DistributionParams(np.zeros(2)))
    with pytest.raises(ValueError):
        gaussian_nll(np.array([np.nan]), DistributionParams(np.zeros(1)))


def test_categorical_nll_cases():
    assert categorical_nll(2, np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    assert categorical_nll(1, [0.0, 1.0]) == 0.0
    assert categorical_nll(0, [1e-20, 1.0]) == pytest.approx(-math.log(1e-12), abs=1e-12)
    assert MAX_CATEGORICAL_NLL == pytest.approx(27.631021115928547)
    with pytest.raises(IndexError):
        categorical_nll(4, np.full(4, 0.25))


def _random_record(rng, with_cats):
    d = int(rng.integers(1, 30))
    x = rng.poisson(3.0, size=d).astype(float)
    dp = DistributionParams(rng.normal(size=d) * 3, rng.uniform(-3, 3, size=d),
                            [rng.dirichlet(np.ones(k)) for k in (3, 5)] if with_cats else None)
    return x, dp, tuple(int(rng.integers(0, k)) for k in (3, 5))


def test_without_categoricals_raw_is_gaussian_nll():
    rng = np.random.default_rng(1)
    x, dp, cats = _random_record(rng, False)
    assert anomaly(x, dp, cats).raw_score == gaussian_nll(x, dp)[0]


def test_components_sum_to_raw_score():
    rng = np.random.default_rng(2)
    for k in range(1000):
        x, dp, cats = _random_record(rng, k % 2 == 0)
        r = anomaly(x, dp, cats, categorical_names=["role", "team"])
        assert abs(sum(r.components.values()) - r.raw_score) < 1e-9


def test_ten_sigma_feature_is_top_contributor():
    rng = np.random.default_rng(3)
    for _ in range(100):
        d = int(rng.integers(2, 50))
        mu, log_var = rng.normal(size=d) * 4, rng.uniform(-4, 4, size=d)
        sigma = np.exp(0.5 * log_var)
        j = int(rng.integers(d))
        x = mu.copy()
        x[j] += 10 * sigma[j]
        top = top_contributors(x, DistributionParams(mu, log_var), k=3)
        assert top[0].index == j
        assert top[0].contribution == pytest.approx(10.0)


def test_contributor_labels_use_schema(schema):
    x = np.zeros(schema.count_dim)
    x[5] = 9
    top = top_contributors(x, DistributionParams(np.zeros(schema.count_dim)), k=1, schema=schema)
    assert top[0].label == schema.label(5)


def test_anomaly_accepts_vectors():
    v = UserDayVector("A", 4, np.array([1, 2]), (0,))
    r = anomaly(v, DistributionParams(np.zeros(2)))
    assert (r.user_id, r.day_index) == ("A", 4)


@given(st.floats(-1e6, 1e6), st.one_of(st.none(), st.floats(-1e3, 1e3)))
def test_record_json_round_trip(raw, std):
    r = AnomalyRecord("U1", 3, raw, std, {"counts": raw}, [], rank=2)
    back = AnomalyRecord.from_json(r.to_json())
    assert back == r
