"""Per-user per-day feature vectors: activity counts by time window plus categoricals.

The count taxonomy is data-driven (JSON). A count feature is one
(time window, activity descriptor) pair; its index is
``window * n_descriptors + descriptor``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import date, datetime
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from insider_stream.ingest import CATEGORY_NAMES, Action, EventRecord, Source

logger = logging.getLogger(__name__)

# qualifier name -> allowed values, per source
QUALIFIERS = {
    Source.LOGON: {"pc": ("common", "uncommon")},
    Source.DEVICE: {"pc": ("common", "uncommon")},
    Source.FILE: {
        "pc": ("common", "uncommon"),
        "media": ("local", "to_removable", "from_removable"),
        "decoy": ("yes", "no"),
        "filename": ("common", "uncommon"),
    },
    Source.HTTP: {"pc": ("common", "uncommon"), "domain": ("common", "uncommon")},
    Source.EMAIL: {
        "pc": ("common", "uncommon"),
        "attachments": ("none", "one", "multiple"),
        "peers": ("common", "uncommon"),
        "scope": ("internal", "external"),
        "bcc": ("yes", "no"),
    },
}

SOURCE_ACTIONS = {
    Source.LOGON: (Action.LOGON, Action.LOGOFF),
    Source.DEVICE: (Action.CONNECT, Action.DISCONNECT),
    Source.FILE: (Action.FILE_OPEN, Action.FILE_WRITE, Action.FILE_COPY, Action.FILE_DELETE),
    Source.HTTP: (Action.HTTP_VISIT, Action.HTTP_DOWNLOAD, Action.HTTP_UPLOAD),
    Source.EMAIL: (Action.EMAIL_SEND, Action.EMAIL_VIEW),
}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class TimeWindow:
    start: int  # minutes after midnight, inclusive
    end: int  # exclusive, at most 1440

    @property
    def label(self):
        return f"{self.start // 60:02d}:{self.start % 60:02d}-{self.end // 60:02d}:{self.end % 60:02d}"

    def contains(self, minute):
        return self.start <= minute < self.end


@dataclass(frozen=True)
class Descriptor:
    source: Source
    action: Action
    qualifiers: tuple  # sorted (name, value) pairs
    label: str

    def matches(self, qual: dict):
        return all(qual.get(k) == v for k, v in self.qualifiers)


def _describe(source, action, q):
    """Human-readable descriptor label built from its qualifiers."""
    q = dict(q)
    pc = f" on {q['pc']} pc" if "pc" in q else ""
    if source is Source.LOGON:
        return f"{action.value.lower()}{pc}"
    if source is Source.DEVICE:
        return f"device {action.value.lower()}{pc}"
    if source is Source.FILE:
        verb = action.value[len("File"):].lower()
        parts = []
        if "filename" in q:
            parts.append(q["filename"])
        if "decoy" in q:
            parts.append("decoy" if q["decoy"] == "yes" else "non-decoy")
        where = {"local": " on local disk", "to_removable": " to removable media",
                 "from_removable": " from removable media"}.get(q.get("media"), "")
        return " ".join(parts + [f"file {verb}{where}"]) + pc
    if source is Source.HTTP:
        verb = action.value[len("Http"):].lower()
        dom = f" on {q['domain']} domain" if "domain" in q else ""
        return f"web {verb}{dom}{pc}"
    # email
    att = {"none": "no attachment", "one": "one attachment",
           "multiple": "multiple attachments"}.get(q.get("attachments"))
    who = " ".join(x for x in (q.get("peers"), q.get("scope")) if x)
    if action is Action.EMAIL_SEND:
        text = "email sent"
        if att:
            text += f" with {att}"
        if who:
            text += f" to {who} recipients"
        if q.get("bcc") == "yes":
            text += " with bcc"
        elif q.get("bcc") == "no":
            text += " without bcc"
    else:
        text = "email viewed"
        if att:
            text += f" with {att}"
        if who:
            text += f" from {who} sender"
        if "bcc" in q:
            text += " with bcc" if q["bcc"] == "yes" else " without bcc"
    return text + pc


@dataclass
class FeatureSchema:
    windows: tuple
    descriptors: tuple
    categorical_specs: tuple  # ((name, cardinality), ...)
    common_threshold: int = 5
    max_entities_per_user: int = 10000

    def __post_init__(self):
        self._by_action = {}
        for j, d in enumerate(self.descriptors):
            self._by_action.setdefault((d.source, d.action), []).append((j, d))
        self._labels = {self.label(i): i for i in range(self.count_dim)}

    @property
    def n_descriptors(self):
        return len(self.descriptors)

    @property
    def count_dim(self):
        return len(self.windows) * len(self.descriptors)

    @property
    def width(self):
        """Total vector width: counts plus one slot per categorical."""
        return self.count_dim + len(self.categorical_specs)

    @property
    def cardinalities(self):
        return tuple(c for _, c in self.categorical_specs)

    @property
    def categorical_names(self):
        return tuple(n for n, _ in self.categorical_specs)

    def index(self, window, descriptor):
        if not (0 <= window < len(self.windows) and 0 <= descriptor < len(self.descriptors)):
            raise IndexError("window or descriptor out of range")
        return window * len(self.descriptors) + descriptor

    def decode(self, index):
        if not 0 <= index < self.count_dim:
            raise IndexError(f"feature index {index} out of range [0, {self.count_dim})")
        return divmod(index, len(self.descriptors))

    def label(self, index):
        w, d = self.decode(index)
        return f"{self.windows[w].label} | {self.descriptors[d].label}"

    def index_of_label(self, label):
        try:
            return self._labels[label]
        except KeyError:
            raise KeyError(f"no feature labelled {label!r}") from None

    def window_of(self, ts: datetime):
        minute = ts.hour * 60 + ts.minute
        for w, win in enumerate(self.windows):
            if win.contains(minute):
                return w
        raise SchemaError(f"no window covers {ts.time()}")

    def descriptor_for(self, source, action, qual):
        for j, d in self._by_action.get((source, action), ()):
            if d.matches(qual):
                return j
        return None

    def to_config(self):
        return {
            "windows": [[f"{w.start // 60:02d}:{w.start % 60:02d}", f"{w.end // 60:02d}:{w.end % 60:02d}"]
                        for w in self.windows],
            "descriptors": [
                {"source": d.source.value, "action": d.action.value,
                 "qualifiers": dict(d.qualifiers), "label": d.label}
                for d in self.descriptors
            ],
            "categoricals": [{"name": n, "cardinality": c} for n, c in self.categorical_specs],
            "common_threshold": self.common_threshold,
            "max_entities_per_user": self.max_entities_per_user,
        }

    def hash(self):
        blob = json.dumps(self.to_config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _minutes(v):
    if isinstance(v, str):
        hh, mm = v.split(":")
        return int(hh) * 60 + int(mm)
    return int(round(float(v) * 60))


def load_schema(config=None) -> FeatureSchema:
    """Build and validate a FeatureSchema from a config dict, a JSON path, or the shipped default.

    Windows given as ``[start, end]`` hours (numbers) or ``"HH:MM"`` strings.
    """
    if config is None:
        text = resources.files("insider_stream").joinpath("data/default_schema.json").read_text()
        config = json.loads(text)
    elif isinstance(config, (str, Path)):
        config = json.loads(Path(config).read_text())

    raw_windows = config.get("windows")
    if not raw_windows:
        raise SchemaError("schema needs at least one time window")
    windows = []
    for w in raw_windows:
        if isinstance(w, dict):
            start, end = w["start"], w["end"]
        else:
            start, end = w
        windows.append(TimeWindow(_minutes(start), _minutes(end)))
    windows.sort(key=lambda w: w.start)
    if windows[0].start != 0 or windows[-1].end != 1440:
        raise SchemaError("time windows must cover the whole day")
    for a, b in zip(windows, windows[1:]):
        if b.start < a.end:
            raise SchemaError(f"overlapping windows {a.label} and {b.label}")
        if b.start > a.end:
            raise SchemaError(f"gap between windows {a.label} and {b.label}")
    for w in windows:
        if w.end <= w.start:
            raise SchemaError(f"empty window {w.label}")

    descriptors = []
    seen = set()
    for k, spec in enumerate(config.get("descriptors", ())):
        try:
            source = Source(spec["source"])
            action = Action(spec["action"])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"descriptor {k}: {exc}") from None
        if action not in SOURCE_ACTIONS[source]:
            raise SchemaError(f"descriptor {k}: action {action.value} not valid for {source.value}")
        quals = spec.get("qualifiers", {}) or {}
        for name, value in quals.items():
            allowed = QUALIFIERS[source].get(name)
            if allowed is None:
                raise SchemaError(f"descriptor {k}: unknown qualifier {name!r} for {source.value}")
            if value not in allowed:
                raise SchemaError(f"descriptor {k}: {name}={value!r} not in {allowed}")
        q = tuple(sorted(quals.items()))
        key = (source, action, q)
        if key in seen:
            raise SchemaError(f"duplicate descriptor {k}: {source.value} {action.value} {dict(q)}")
        seen.add(key)
        label = spec.get("label") or _describe(source, action, q)
        descriptors.append(Descriptor(source, action, q, label))
    if not descriptors:
        raise SchemaError("schema needs at least one descriptor")

    # two descriptors of one action overlap unless some shared qualifier differs
    by_action = {}
    for d in descriptors:
        by_action.setdefault((d.source, d.action), []).append(d)
    for group in by_action.values():
        for i, a in enumerate(group):
            qa = dict(a.qualifiers)
            for b in group[i + 1:]:
                qb = dict(b.qualifiers)
                if all(qa[k] == qb[k] for k in qa.keys() & qb.keys()):
                    raise SchemaError(f"descriptors overlap: {a.label!r} and {b.label!r}")
    labels = [d.label for d in descriptors]
    if len(set(labels)) != len(labels):
        raise SchemaError("descriptor labels must be unique")

    cats = config.get("categoricals")
    if cats is None:
        from insider_stream.ingest import DEFAULT_CARDINALITIES
        cats = [{"name": n, "cardinality": c} for n, c in zip(CATEGORY_NAMES, DEFAULT_CARDINALITIES)]
    categorical_specs = tuple((c["name"], int(c["cardinality"])) for c in cats)
    for name, card in categorical_specs:
        if card < 1:
            raise SchemaError(f"categorical {name!r} needs cardinality >= 1")

    threshold = int(config.get("common_threshold", 5))
    if threshold < 1:
        raise SchemaError("common_threshold must be >= 1")
    return FeatureSchema(
        windows=tuple(windows),
        descriptors=tuple(descriptors),
        categorical_specs=categorical_specs,
        common_threshold=threshold,
        max_entities_per_user=int(config.get("max_entities_per_user", 10000)),
    )


class PopularityTable:
    """Per-user running sighting counts of entities (pcs, files, domains, addresses).

    An entity is common for a user once it has been seen at least
    ``threshold`` times before the current event. Each user keeps at most
    ``max_entities`` entries per family, least recently seen dropped first.
    """

    def __init__(self, threshold=5, max_entities=10000):
        self.threshold = threshold
        self.max_entities = max_entities
        self._tables: dict = {}

    def observe(self, user, family, entities):
        """Classify a set of entities (common only if all are common), then count them."""
        table = self._tables.setdefault((user, family), OrderedDict())
        common = True
        for ent in entities:
            if table.get(ent, 0) < self.threshold:
                common = False
        for ent in entities:
            table[ent] = table.get(ent, 0) + 1
            table.move_to_end(ent)
            if len(table) > self.max_entities:
                table.popitem(last=False)
        return "common" if common else "uncommon"

    def count(self, user, family, entity):
        return self._tables.get((user, family), {}).get(entity, 0)


def _scope(addresses, org_domains):
    if not org_domains:
        return "internal"
    for a in addresses:
        dom = a.rsplit("@", 1)[1] if "@" in a else ""
        if dom not in org_domains:
            return "external"
    return "internal"


def event_qualifiers(e: EventRecord, popularity: PopularityTable, org_domains=frozenset()):
    """Resolve every qualifier of an event and update the popularity tables."""
    u = e.user_id
    q = {"pc": popularity.observe(u, "pc", (e.pc_id,))}
    a = e.attributes
    if e.source is Source.FILE:
        if a.get("to_removable"):
            q["media"] = "to_removable"
        elif a.get("from_removable"):
            q["media"] = "from_removable"
        else:
            q["media"] = "local"
        q["decoy"] = "yes" if a.get("decoy") else "no"
        q["filename"] = popularity.observe(u, "file", (a["filename"].lower(),))
    elif e.source is Source.HTTP:
        q["domain"] = popularity.observe(u, "domain", (a["domain"],))
    elif e.source is Source.EMAIL:
        if e.action is Action.EMAIL_SEND:
            peers = list(dict.fromkeys(a["to"] + a["cc"] + a["bcc"]))
        else:
            peers = [a["from"]] if a["from"] else []
        q["peers"] = popularity.observe(u, "addr", peers)
        q["scope"] = _scope(peers, org_domains)
        n = a.get("attachments", 0)
        q["attachments"] = "none" if n == 0 else ("one" if n == 1 else "multiple")
        q["bcc"] = "yes" if a.get("bcc") else "no"
    return q


class EventClassifier:
    """Maps events to count-feature indices; owns the popularity tables."""

    def __init__(self, schema: FeatureSchema, org_domains=()):
        self.schema = schema
        self.org_domains = frozenset(d.lower() for d in org_domains)
        self.popularity = PopularityTable(schema.common_threshold, schema.max_entities_per_user)

    def classify(self, e: EventRecord):
        q = event_qualifiers(e, self.popularity, self.org_domains)
        j = self.schema.descriptor_for(e.source, e.action, q)
        if j is None:
            return None
        return self.schema.index(self.schema.window_of(e.timestamp), j)


def classify_event(e: EventRecord, schema: FeatureSchema, popularity=None, org_domains=()):
    """Feature index of one event, or None. Without a table every entity is unseen."""
    if popularity is None:
        popularity = PopularityTable(schema.common_threshold, schema.max_entities_per_user)
    q = event_qualifiers(e, popularity, frozenset(d.lower() for d in org_domains))
    j = schema.descriptor_for(e.source, e.action, q)
    if j is None:
        return None
    return schema.index(schema.window_of(e.timestamp), j)


@dataclass
class UserDayVector:
    user_id: str
    day_index: int
    counts: np.ndarray
    categoricals: tuple = ()

    def __eq__(self, other):
        if not isinstance(other, UserDayVector):
            return NotImplemented
        return (self.user_id == other.user_id and self.day_index == other.day_index
                and self.categoricals == other.categoricals
                and np.array_equal(self.counts, other.counts))


class DayAggregator:
    """Streams events into per-user daily count vectors.

    Every user seen so far is emitted on every day that has events, with a
    zero vector when idle, so per-user sequences have no gaps.
    """

    def __init__(self, schema: FeatureSchema, origin: date | None = None, org_domains=()):
        self.schema = schema
        self.origin = origin
        self.classifier = EventClassifier(schema, org_domains)
        self.current_day = None
        self.current: dict = {}
        self.known: dict = {}  # user -> categoricals
        self.events_seen = 0
        self.events_classified = 0

    def _flush(self):
        day_index = (self.current_day - self.origin).days
        out = []
        for user in sorted(self.known):
            counts = self.current.get(user)
            if counts is None:
                counts = np.zeros(self.schema.count_dim, dtype=np.int64)
            out.append(UserDayVector(user, day_index, counts, self.known[user]))
        self.current = {}
        return day_index, out

    def feed(self, e: EventRecord):
        """Add one event; returns a finished day ``(day_index, vectors)`` at a day boundary."""
        d = e.timestamp.date()
        flushed = None
        if self.origin is None:
            self.origin = d
        if self.current_day is not None and d != self.current_day:
            if d < self.current_day:
                raise ValueError(f"event on {d} after day {self.current_day}: stream not ordered")
            flushed = self._flush()
        self.current_day = d
        self.events_seen += 1
        self.known[e.user_id] = tuple(e.categoricals)
        idx = self.classifier.classify(e)
        counts = self.current.get(e.user_id)
        if counts is None:
            counts = self.current[e.user_id] = np.zeros(self.schema.count_dim, dtype=np.int64)
        if idx is not None:
            counts[idx] += 1
            self.events_classified += 1
        return flushed

    def finish(self):
        if self.current_day is None:
            return None
        out = self._flush()
        self.current_day = None
        return out


def aggregate(stream: Iterable[EventRecord], schema: FeatureSchema, origin=None,
              org_domains=None) -> Iterator[tuple]:
    """Yield ``(day_index, [UserDayVector, ...])`` for each day of a time-ordered stream."""
    if org_domains is None:
        org_domains = getattr(stream, "org_domains", ())
    agg = DayAggregator(schema, origin, org_domains)
    for e in stream:
        done = agg.feed(e)
        if done is not None:
            yield done
    last = agg.finish()
    if last is not None:
        yield last


def feature_header(schema: FeatureSchema):
    return (["user", "day"] + [f"f{i}" for i in range(schema.count_dim)]
            + list(schema.categorical_names))


def write_feature_csv(path, days: Iterable[tuple], schema: FeatureSchema):
    """Materialize aggregated days as CSV; returns the number of rows written."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(feature_header(schema))
        for day_index, vectors in days:
            for v in vectors:
                w.writerow([v.user_id, day_index, *v.counts.tolist(), *v.categoricals])
                n += 1
    return n


def read_feature_csv(path, schema: FeatureSchema | None = None) -> Iterator[tuple]:
    """Read a feature CSV back as ``(day_index, [UserDayVector, ...])`` groups."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["user", "day"]:
            raise ValueError(f"{path}: not a feature CSV (header {header[:2]})")
        n_counts = sum(1 for h in header if h.startswith("f") and h[1:].isdigit())
        if schema is not None and n_counts != schema.count_dim:
            raise ValueError(f"{path}: {n_counts} count columns, schema has {schema.count_dim}")
        day, group = None, []
        for row in reader:
            d = int(row[1])
            counts = np.array(row[2:2 + n_counts], dtype=np.int64)
            cats = tuple(int(c) for c in row[2 + n_counts:])
            if day is not None and d != day:
                if d < day:
                    raise ValueError(f"{path}: day {d} after day {day}")
                yield day, group
                group = []
            day = d
            group.append(UserDayVector(row[0], d, counts, cats))
        if group:
            yield day, group
