from datetime import date, datetime

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from insider_stream.features import (
    PopularityTable,
    SchemaError,
    UserDayVector,
    aggregate,
    classify_event,
    load_schema,
    read_feature_csv,
    write_feature_csv,
)
from insider_stream.ingest import Action, EventRecord, Source


def _event(ts, user="A", source=Source.LOGON, action=Action.LOGON, pc="PC-1", **attrs):
    return EventRecord(source, ts, user, pc, action, attrs, (0,))


def test_default_schema_dimensions(schema):
    assert schema.count_dim == 408
    assert schema.width == 414
    assert len(schema.windows) == 4 and schema.n_descriptors == 102


def test_small_config_dimension(tiny_schema):
    assert tiny_schema.count_dim == 6


def test_overlapping_windows_rejected():
    with pytest.raises(SchemaError, match="overlap"):
        load_schema({"windows": [["00:00", "13:00"], ["12:00", "24:00"]],
                     "descriptors": [{"source": "logon", "action": "Logon"}]})


def test_gap_in_windows_rejected():
    with pytest.raises(SchemaError):
        load_schema({"windows": [["00:00", "11:00"], ["12:00", "24:00"]],
                     "descriptors": [{"source": "logon", "action": "Logon"}]})


def test_overlapping_descriptors_rejected():
    with pytest.raises(SchemaError, match="overlap"):
        load_schema({"windows": [[0, 24]], "descriptors": [
            {"source": "logon", "action": "Logon"},
            {"source": "logon", "action": "Logon", "qualifiers": {"pc": "common"}}]})


def test_removable_media_copy_example(schema):
    e = _event(datetime(2010, 1, 6, 13, 40), source=Source.FILE, action=Action.FILE_COPY,
               filename="report.doc", to_removable=False, from_removable=True, decoy=False)
    idx = classify_event(e, schema)  # no history, so the file is uncommon
    assert idx == schema.index_of_label(
        "12:00-18:00 | uncommon non-decoy file copy from removable media")
    assert schema.label(idx).startswith("12:00-18:00")


def test_midnight_falls_in_first_window(schema):
    assert schema.window_of(datetime(2010, 1, 4, 0, 0)) == 0
    assert schema.window_of(datetime(2010, 1, 4, 6, 0)) == 1  # half-open windows
    assert schema.window_of(datetime(2010, 1, 4, 23, 59)) == 3


def test_event_without_descriptor_is_unclassified(tiny_schema):
    e = _event(datetime(2010, 1, 4, 9), source=Source.HTTP, action=Action.HTTP_VISIT,
               url="http://a.com/x", domain="a.com")
    assert classify_event(e, tiny_schema) is None


def test_entity_becomes_common_after_threshold():
    pop = PopularityTable(threshold=5)
    seen = [pop.observe("A", "pc", ("PC-1",)) for _ in range(7)]
    assert seen == ["uncommon"] * 5 + ["common"] * 2
    assert pop.observe("B", "pc", ("PC-1",)) == "uncommon"  # counts are per user


def test_popularity_table_bounded():
    pop = PopularityTable(threshold=1, max_entities=3)
    for k in range(10):
        pop.observe("A", "file", (f"f{k}",))
    assert pop.count("A", "file", "f0") == 0
    assert pop.count("A", "file", "f9") == 1


def test_three_events_in_one_window_counted(tiny_schema):
    events = [_event(datetime(2010, 1, 4, h)) for h in (8, 9, 10)]
    (day, vecs), = list(aggregate(events, tiny_schema))
    assert day == 0
    expected = np.zeros(6, dtype=np.int64)
    expected[tiny_schema.index(0, 0)] = 3
    assert_array_equal(vecs[0].counts, expected)


def test_idle_known_user_gets_zero_vector(tiny_schema):
    events = [_event(datetime(2010, 1, 4, 9), "A"), _event(datetime(2010, 1, 4, 9), "B"),
              _event(datetime(2010, 1, 5, 9), "B")]
    days = list(aggregate(events, tiny_schema))
    assert [d for d, _ in days] == [0, 1]
    day1 = {v.user_id: v for v in days[1][1]}
    assert set(day1) == {"A", "B"}
    assert not day1["A"].counts.any()


def test_two_users_same_day(tiny_schema):
    events = [_event(datetime(2010, 1, 4, 9), "A"), _event(datetime(2010, 1, 4, 10), "B")]
    (day, vecs), = list(aggregate(events, tiny_schema))
    assert [v.user_id for v in vecs] == ["A", "B"]
    assert {v.day_index for v in vecs} == {0}


def test_origin_sets_day_index(tiny_schema):
    events = [_event(datetime(2010, 1, 6, 9))]
    (day, _), = list(aggregate(events, tiny_schema, origin=date(2010, 1, 4)))
    assert day == 2


def test_index_zero_label(schema):
    assert schema.label(0) == "00:00-06:00 | logon on common pc"


@given(st.integers(0, 407))
def test_label_index_bijection(i):
    schema = load_schema()
    w, d = schema.decode(i)
    assert schema.index(w, d) == i
    assert schema.index_of_label(schema.label(i)) == i


def test_schema_hash_tracks_content(tiny_schema, schema):
    assert tiny_schema.hash() != schema.hash()
    assert load_schema(tiny_schema.to_config()).hash() == tiny_schema.hash()


def test_feature_csv_round_trip(tmp_path, tiny_schema):
    days = [(0, [UserDayVector("A", 0, np.arange(6), (1,)), UserDayVector("B", 0, np.ones(6, int), (2,))]),
            (3, [UserDayVector("A", 3, np.zeros(6, int), (1,))])]
    p = tmp_path / "f.csv"
    assert write_feature_csv(p, days, tiny_schema) == 3
    back = list(read_feature_csv(p, tiny_schema))
    assert [d for d, _ in back] == [0, 3]
    assert back[0][1] == days[0][1] and back[1][1] == days[1][1]


def test_feature_csv_width_mismatch(tmp_path, tiny_schema, schema):
    p = tmp_path / "f.csv"
    write_feature_csv(p, [(0, [UserDayVector("A", 0, np.zeros(6, int), (1,))])], tiny_schema)
    with pytest.raises(ValueError, match="count columns"):
        list(read_feature_csv(p, schema))
