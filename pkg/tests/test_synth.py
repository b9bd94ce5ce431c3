import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from insider_stream.features import aggregate
from insider_stream.ingest import Source, find_source_files, open_stream, weekday_filter
from insider_stream.synth import (
    Injection,
    SynthConfig,
    SynthError,
    emit_raw_logs,
    generate,
    plan_injections,
    summary_table,
)


def _small(seed=0, **kw):
    return SynthConfig(n_users=12, n_days=12, seed=seed, **kw)


def _ingest(folder, cfg):
    stream = open_stream(find_source_files(folder), directory=folder / "LDAP.csv",
                         decoys=folder / "decoy_file.csv", cardinalities=cfg.schema.cardinalities)
    return list(aggregate(weekday_filter(stream), cfg.schema, origin=cfg.origin))


def _flat(days):
    return [(d, v.user_id, v.day_index, tuple(v.counts.tolist()), tuple(v.categoricals))
            for d, vecs in days for v in vecs]


def _poisson_quantile(lam, q):
    k, cdf, pmf = 0, 0.0, math.exp(-lam)
    while True:
        cdf += pmf
        if cdf >= q:
            return k
        k += 1
        pmf *= lam / k


def test_no_injections_no_labels():
    assert len(generate(_small()).labels) == 0


def test_same_seed_same_stream():
    a, b = generate(_small(seed=3)), generate(_small(seed=3))
    assert _flat(a.days) == _flat(b.days)
    assert _flat(generate(_small(seed=4)).days) != _flat(a.days)


def test_eight_sigma_injection_clears_poisson_tail(schema):
    f = next(i for i in range(schema.count_dim) if "common" not in schema.label(i))
    lam = 4.0
    rates = np.zeros((3, schema.count_dim))
    rates[:, f] = lam
    cfg = SynthConfig(n_users=3, n_days=10, rates=rates, weekly=(1.0,) * 5,
                      injections=(Injection(1, 6, (f,), 8.0),))
    data = generate(cfg)
    vec = next(v for d, vecs in data.days if d == cfg.day_index(6) for v in vecs if v.user_id == "SYN0001")
    assert vec.counts[f] > _poisson_quantile(lam, 0.999)
    assert data.labels.days == {("SYN0001", cfg.day_index(6))}


def test_injection_touches_only_its_cells():
    cfg = _small(seed=5)
    inj = plan_injections(cfg, 3, seed=1, first_day=2)
    clean, dirty = generate(cfg), generate(replace(cfg, injections=inj))
    targets = {(cfg.user_ids()[i.user], cfg.day_index(i.day), f) for i in inj for f in i.features}
    for (d, a), (_, b) in zip(clean.days, dirty.days):
        for va, vb in zip(a, b):
            diff = np.flatnonzero(va.counts != vb.counts)
            assert all((va.user_id, d, int(f)) in targets for f in diff)
    assert len(dirty.labels) == 3


def test_plan_injections_valid():
    cfg = _small(seed=2)
    inj = plan_injections(cfg, 4, seed=0, first_day=3)
    assert len({(i.user, i.day) for i in inj}) == 4
    assert all(len(i.features) == 3 and 6.0 <= i.multiplier <= 10.0 and i.day >= 3 for i in inj)


def test_invalid_injection_rejected():
    with pytest.raises(SynthError):
        _small(injections=(Injection(99, 0, (0,), 6.0),))
    with pytest.raises(SynthError):
        _small(injections=(Injection(0, 0, (0,), 6.0), Injection(0, 0, (1,), 7.0)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_emit_ingest_round_trip(tmp_path, seed):
    cfg = _small(seed=seed)
    cfg = replace(cfg, injections=plan_injections(cfg, 2, seed=seed, first_day=2))
    data = generate(cfg)
    emit_raw_logs(cfg, tmp_path, data)
    assert _flat(_ingest(tmp_path, cfg)) == _flat(data.days)


def test_weekend_rows_dropped_downstream(tmp_path):
    cfg = _small(seed=7, weekend_activity=3.0)
    data = generate(cfg)
    summary = emit_raw_logs(cfg, tmp_path, data)
    assert sum(summary["weekend_events"].values()) > 0
    assert _flat(_ingest(tmp_path, cfg)) == _flat(data.days)


def test_summary_matches_line_counts(tmp_path):
    cfg = _small(seed=8, weekend_activity=1.0)
    summary = emit_raw_logs(cfg, tmp_path)
    total = 0
    for s in Source:
        lines = (tmp_path / f"{s.value}.csv").read_text().splitlines()
        assert len(lines) - 1 == summary["weekday_events"][s.value] + summary["weekend_events"][s.value]
        total += len(lines) - 1
    assert total == summary["total_events"]
    table = summary_table(summary)
    assert str(summary["total_events"]) in table


def test_days_skip_weekends():
    cfg = _small()
    assert [cfg.day_index(k) for k in range(7)] == [0, 1, 2, 3, 4, 7, 8]
    assert_array_equal(cfg.baseline_rates(), _small().baseline_rates())
