import json
from fractions import Fraction

import numpy as np
import pytest
from conftest import make_days
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from insider_stream.baselines import BaselineConfig, IsolationForest, PcaModel, baseline_stream
from insider_stream.baselines.iforest import average_path_length
from insider_stream.baselines.pca import NotFittedError
from insider_stream.model import Model, ModelConfig
from insider_stream.trainer import OnlineTrainer


def _subspace_pca(seed=0, dim=5, k=2, n=200):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    mean = rng.normal(size=dim) * 3
    coef = rng.normal(size=(n, k)) * [5.0, 2.0][:k]
    x = mean + coef @ basis[:, :k].T
    return x, basis, mean


def _fitted(x, k):
    m = PcaModel(x.shape[1], k=k)
    m.add_day(x)
    return m.fit()


def test_pca_in_span_error_zero_and_orthogonal_unit_error_one():
    x, basis, mean = _subspace_pca()
    m = _fitted(x, 2)
    on = mean + 0.7 * basis[:, 0] - 1.3 * basis[:, 1]
    off = mean + basis[:, 3]
    assert m.score(on) < 1e-9
    assert abs(m.score(off) - 1.0) < 1e-9


def test_pca_components_orthonormal_and_projector_idempotent():
    x = np.random.default_rng(1).poisson(3.0, size=(300, 12)).astype(float)
    m = _fitted(x, 4)
    assert_allclose(m.components.T @ m.components, np.eye(4), atol=1e-8)
    p = m.projector()
    assert_allclose(p @ p, p, atol=1e-10)


def test_pca_off_line_point_has_max_score():
    rng = np.random.default_rng(2)
    t = rng.normal(size=40)
    x = np.column_stack([t, 2.0 * t + 1.0])
    m = _fitted(x, 1)
    query = np.vstack([x, [0.0, 4.0]])
    scores = m.score(query)
    # oracle: squared distance to the line y = 2t + 1
    d = (2.0 * query[:, 0] - query[:, 1] + 1.0) ** 2 / 5.0
    assert_allclose(scores, d, atol=1e-9)
    assert np.argmax(scores) == len(x)


def test_pca_before_fit_is_an_error():
    m = PcaModel(3, k=1)
    with pytest.raises(NotFittedError):
        m.score(np.zeros(3))
    with pytest.raises(NotFittedError):
        m.fit()
    with pytest.raises(ValueError):
        PcaModel(3, k=4)


def test_pca_decay_weights_recent_days():
    m = PcaModel(2, k=1, decay=0.5)
    m.add_day(np.array([[0.0, 0.0]]))
    m.add_day(np.array([[3.0, 0.0]]))
    mean, _ = m.covariance()
    assert_allclose(mean, [2.0, 0.0])  # weights 0.5 and 1


def test_average_path_length_closed_form():
    assert average_path_length(2) == 1.0
    assert average_path_length(1) == 0.0
    # exact rational oracle
    h = sum(Fraction(1, i) for i in range(1, 256))
    assert average_path_length(256) == pytest.approx(float(2 * h - Fraction(2 * 255, 256)), abs=1e-12)


def test_single_point_scores_half():
    f = IsolationForest(n_trees=20, contamination=0).fit(np.ones((1, 3)))
    assert np.all(f.score(np.random.default_rng(0).normal(size=(5, 3))) == 0.5)


def test_far_outlier_ranked_first():
    hits = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = np.vstack([rng.normal(scale=0.5, size=(199, 2)), [[8.0, 8.0]]])
        s = IsolationForest(n_trees=100, seed=seed, contamination=0).fit(x).score(x)
        hits += int(np.argmax(s) == 199)
    assert hits >= 48


def _tree_height(left, right):
    depth = {0: 0}
    stack = [0]
    while stack:
        n = stack.pop()
        if left[n] >= 0:
            for c in (left[n], right[n]):
                depth[c] = depth[n] + 1
                stack.append(c)
    return max(depth.values())


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 300), st.integers(1, 5), st.integers(0, 10_000))
def test_forest_height_and_score_bounds(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    f = IsolationForest(n_trees=5, sample_size=64, seed=seed, contamination=0).fit(x)
    for feature, threshold, left, right, _ in f.trees:
        assert _tree_height(left, right) <= f.max_depth
    s = f.score(x)
    assert np.all((s > 0) & (s <= 1))
    eh = f.path_lengths(x)
    order = np.argsort(eh, kind="stable")
    assert np.all(np.diff(s[order]) <= 0)  # longer paths never score higher


def test_forest_deterministic_and_bootstrap_differs():
    x = np.random.default_rng(3).normal(size=(500, 4))
    a = IsolationForest(seed=1).fit(x).score(x)
    b = IsolationForest(seed=1).fit(x).score(x)
    c = IsolationForest(seed=1, bootstrap=True).fit(x).score(x)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_contamination_threshold_flags_share():
    x = np.random.default_rng(4).normal(size=(1000, 3))
    f = IsolationForest(contamination=0.1, seed=0).fit(x)
    assert f.predict(x).mean() == pytest.approx(0.1, abs=0.01)


def _run(cfg, days):
    return [r for recs in baseline_stream(days, cfg) for r in recs]


def test_stream_records_match_trainer_format():
    days = make_days(6, 14, 5)
    base = _run(BaselineConfig(kind="pca", k=2, min_history=3), days)
    tr = OnlineTrainer(Model(ModelConfig(count_dim=5, hidden_dim=4)))
    neural = [r for recs in tr.run(days) for r in recs]
    assert set(json.loads(base[-1].to_json())) == set(json.loads(neural[-1].to_json()))
    assert all(not r.scored for r in base[:18]) and all(r.scored for r in base[18:])


@pytest.mark.parametrize("kind", ["pca", "iforest"])
def test_stream_refit_deterministic(kind):
    days = make_days(8, 30, 5, seed=2)
    cfg = BaselineConfig(kind=kind, k=2, min_history=5, refresh=7, n_trees=20, seed=3)
    a, b = _run(cfg, days), _run(cfg, days)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]


def test_stream_full_rank_pca_reconstructs():
    days = make_days(10, 20, 4, seed=5)
    recs = _run(BaselineConfig(kind="pca", k=4, min_history=3), days)
    assert max(r.raw_score for r in recs if r.scored) < 1e-9


def test_stream_scores_use_only_earlier_days():
    days = make_days(5, 12, 4, seed=6)
    cfg = BaselineConfig(kind="pca", k=1, min_history=10, refresh=100)
    recs = _run(cfg, days)
    m = PcaModel(4, k=1)
    for _, vecs in days[:10]:
        m.add_day(np.array([v.counts for v in sorted(vecs, key=lambda v: v.user_id)]))
    m.fit()
    expect = m.score(np.array([v.counts for v in days[11][1]], dtype=float))
    assert_allclose([r.raw_score for r in recs[55:]], expect, rtol=1e-12)
