"""Seeded synthetic user-day streams with injected threat days, plus CERT-style log emission.

Counts are Poisson around per-user rates. Entity choices (pcs, files,
domains, mail addresses) are planned so that re-ingesting the emitted logs
reproduces the generated vectors exactly: every entity family of a user has
a pool whose entity 0 is the first to become common, and a "warming" entity
that takes uncommon and unconstrained uses until it has been seen
``common_threshold`` times. Whether a common entity exists at the start of a
day then depends only on use totals, never on event order. Common-qualified
baseline counts are clamped to zero on days when no common entity exists.

Injected events draw on separate entity pools, so an injection never changes
the baseline of any feature, day or user.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from insider_stream.eval import LabelSet
from insider_stream.features import FeatureSchema, UserDayVector, load_schema
from insider_stream.ingest import (
    CATEGORY_NAMES,
    DATE_FORMAT,
    DIRECTORY_COLUMNS,
    SOURCE_COLUMNS,
    Action,
    Source,
)

logger = logging.getLogger(__name__)

ORG_DOMAIN = "dtaa.com"
DEFAULT_ORIGIN = date(2010, 1, 4)  # a Monday

# entity pools: (family, kind)
POOLS = (
    ("pc", ""),
    ("file", "plain"),
    ("file", "decoy"),
    ("domain", ""),
    ("addr", "internal"),
    ("addr", "external"),
)
_POOL_INDEX = {p: k for k, p in enumerate(POOLS)}
NEUTRAL, COMMON, UNCOMMON = 0, 1, 2

_ACTIVITY_TEXT = {
    Action.LOGON: "Logon",
    Action.LOGOFF: "Logoff",
    Action.CONNECT: "Connect",
    Action.DISCONNECT: "Disconnect",
    Action.FILE_OPEN: "File Open",
    Action.FILE_WRITE: "File Write",
    Action.FILE_COPY: "File Copy",
    Action.FILE_DELETE: "File Delete",
    Action.HTTP_VISIT: "WWW Visit",
    Action.HTTP_DOWNLOAD: "WWW Download",
    Action.HTTP_UPLOAD: "WWW Upload",
    Action.EMAIL_SEND: "Send",
    Action.EMAIL_VIEW: "View",
}

# relative prior weight of descriptor qualifier values
_QUALIFIER_WEIGHT = {
    ("pc", "uncommon"): 0.1,
    ("filename", "uncommon"): 0.3,
    ("domain", "uncommon"): 0.3,
    ("peers", "uncommon"): 0.3,
    ("decoy", "yes"): 0.05,
    ("media", "to_removable"): 0.1,
    ("media", "from_removable"): 0.1,
    ("scope", "external"): 0.4,
    ("attachments", "one"): 0.3,
    ("attachments", "multiple"): 0.1,
    ("bcc", "yes"): 0.1,
}
# share of events per source, roughly the proportions of the CERT release
SOURCE_SHARE = {Source.LOGON: 0.026, Source.DEVICE: 0.011, Source.FILE: 0.015,
                Source.HTTP: 0.867, Source.EMAIL: 0.081}


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Injection:
    user: int  # user index
    day: int  # weekday index, 0-based
    features: tuple
    multiplier: float

    def to_dict(self):
        return {"user": self.user, "day": self.day, "features": list(self.features),
                "multiplier": self.multiplier}


@dataclass
class SynthConfig:
    n_users: int = 200
    n_days: int = 120  # weekdays
    seed: int = 0
    activity: float = 70.0  # mean baseline events per user-day
    user_spread: float = 0.5  # lognormal sigma of per-user activity
    feature_jitter: float = 2.0  # gamma shape of per-user, per-feature rate jitter
    weekly: tuple = (1.0, 1.05, 1.0, 0.95, 0.85)  # Monday..Friday rate factors
    min_active_rate: float = 0.5  # rarer features are used by a share of users at this rate
    weekend_activity: float = 0.0  # weekend events per user-day, dropped by the weekday filter
    injections: tuple = ()
    origin: date = DEFAULT_ORIGIN
    schema: FeatureSchema | None = field(default=None, repr=False)
    rates: np.ndarray | None = field(default=None, repr=False)  # overrides the prior

    def __post_init__(self):
        if self.schema is None:
            self.schema = load_schema()
        if isinstance(self.origin, str):
            self.origin = date.fromisoformat(self.origin)
        if self.origin.weekday() != 0:
            raise SynthError("origin must be a Monday")
        if self.n_users < 1 or self.n_days < 1:
            raise SynthError("n_users and n_days must be positive")
        if len(self.weekly) != 5 or min(self.weekly) < 0:
            raise SynthError("weekly needs five non-negative factors")
        self.injections = tuple(
            inj if isinstance(inj, Injection)
            else Injection(int(inj["user"]), int(inj["day"]), tuple(int(f) for f in inj["features"]),
                           float(inj["multiplier"]))
            for inj in self.injections
        )
        F = self.schema.count_dim
        seen = set()
        for inj in self.injections:
            if not 0 <= inj.user < self.n_users:
                raise SynthError(f"injection user {inj.user} out of range")
            if not 0 <= inj.day < self.n_days:
                raise SynthError(f"injection day {inj.day} out of range")
            if not inj.features or any(not 0 <= f < F for f in inj.features):
                raise SynthError(f"injection features {inj.features} out of range")
            if inj.multiplier <= 0:
                raise SynthError("injection multiplier must be positive")
            if (inj.user, inj.day) in seen:
                raise SynthError(f"two injections on user {inj.user} day {inj.day}")
            seen.add((inj.user, inj.day))
        if self.rates is not None:
            self.rates = np.asarray(self.rates, dtype=np.float64)
            if self.rates.shape != (self.n_users, F):
                raise SynthError(f"rates must have shape {(self.n_users, F)}")
            if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
                raise SynthError("rates must be finite and non-negative")

    def user_ids(self):
        return [f"SYN{u:04d}" for u in range(self.n_users)]

    def day_index(self, k):
        """Calendar-day offset of weekday ``k`` from the origin Monday."""
        return 7 * (k // 5) + k % 5

    def baseline_rates(self):
        if self.rates is not None:
            return self.rates
        return _prior_rates(self, np.random.default_rng([self.seed, 0]))

    def to_dict(self):
        return {
            "n_users": self.n_users, "n_days": self.n_days, "seed": self.seed,
            "activity": self.activity, "user_spread": self.user_spread,
            "feature_jitter": self.feature_jitter, "min_active_rate": self.min_active_rate,
            "weekly": list(self.weekly),
            "weekend_activity": self.weekend_activity,
            "injections": [i.to_dict() for i in self.injections],
            "origin": self.origin.isoformat(),
        }

    @classmethod
    def from_dict(cls, d, schema=None):
        d = dict(d)
        d["weekly"] = tuple(d.get("weekly", cls.weekly))
        return cls(schema=schema, **d)


def _window_weights(schema):
    # share of each window inside working hours (07:00-19:00), plus a little night activity
    out = []
    for w in schema.windows:
        overlap = max(0, min(w.end, 19 * 60) - max(w.start, 7 * 60)) / 60.0
        out.append(0.05 * (w.end - w.start) / 60.0 + overlap)
    out = np.array(out)
    return out / out.sum()


def descriptor_weights(schema):
    """Prior event share of each descriptor: qualifier weights, normalized per source."""
    w = np.ones(schema.n_descriptors)
    src = np.array([d.source.value for d in schema.descriptors])
    for j, d in enumerate(schema.descriptors):
        for kv in d.qualifiers:
            w[j] *= _QUALIFIER_WEIGHT.get(kv, 1.0)
    present = {d.source for d in schema.descriptors}
    total_share = sum(SOURCE_SHARE[s] for s in present)
    for s in present:
        m = src == s.value
        w[m] *= SOURCE_SHARE[s] / total_share / w[m].sum()
    return w


def _prior_rates(cfg: SynthConfig, rng):
    schema = cfg.schema
    base = descriptor_weights(schema) * rng.gamma(2.0, 0.5, size=schema.n_descriptors)
    profile = np.outer(_window_weights(schema), base).reshape(-1)
    profile *= cfg.activity / profile.sum()
    scale = rng.lognormal(-0.5 * cfg.user_spread ** 2, cfg.user_spread, size=cfg.n_users)
    jitter = rng.gamma(cfg.feature_jitter, 1.0 / cfg.feature_jitter,
                       size=(cfg.n_users, schema.count_dim))
    rates = scale[:, None] * profile[None, :] * jitter
    if cfg.min_active_rate > 0:
        # a rare activity is done regularly by a few users rather than sporadically by all
        share = np.minimum(1.0, profile / cfg.min_active_rate)
        used = rng.random((cfg.n_users, schema.count_dim)) < share[None, :]
        rates = np.where(used, rates / share[None, :], 0.0)
    return rates


def feature_pool_uses(schema: FeatureSchema):
    """For each count feature, its ``((pool, status), ...)`` entity uses."""
    out = []
    for f in range(schema.count_dim):
        _, j = schema.decode(f)
        d = schema.descriptors[j]
        q = dict(d.qualifiers)

        def status(name):
            return {"common": COMMON, "uncommon": UNCOMMON}.get(q.get(name), NEUTRAL)

        uses = [(_POOL_INDEX[("pc", "")], status("pc"))]
        if d.source is Source.FILE:
            kind = "decoy" if q.get("decoy") == "yes" else "plain"
            uses.append((_POOL_INDEX[("file", kind)], status("filename")))
        elif d.source is Source.HTTP:
            uses.append((_POOL_INDEX[("domain", "")], status("domain")))
        elif d.source is Source.EMAIL:
            kind = "external" if q.get("scope") == "external" else "internal"
            uses.append((_POOL_INDEX[("addr", kind)], status("peers")))
        out.append(tuple(uses))
    return out


class _PoolState:
    """Per-user entity pool counters: common entities so far, and uses of the warming one."""

    def __init__(self, n_users, threshold):
        self.k = threshold
        self.common = np.zeros((n_users, len(POOLS)), dtype=np.int64)
        self.warm = np.zeros((n_users, len(POOLS)), dtype=np.int64)

    def advance(self, warming_uses):
        total = self.warm + warming_uses
        self.common += total // self.k
        self.warm = total % self.k


class _UseMatrices:
    def __init__(self, schema):
        F, P = schema.count_dim, len(POOLS)
        self.uses = feature_pool_uses(schema)
        self.common = np.zeros((F, P), dtype=np.int64)
        self.uncommon = np.zeros((F, P), dtype=np.int64)
        self.neutral = np.zeros((F, P), dtype=np.int64)
        for f, uses in enumerate(self.uses):
            for p, st in uses:
                {COMMON: self.common, UNCOMMON: self.uncommon, NEUTRAL: self.neutral}[st][f, p] += 1
        self.needs_common = self.common.any(axis=1)


def _category_values(cfg: SynthConfig, rng):
    """Directory attribute strings per user, one per categorical."""
    names = cfg.schema.categorical_names
    cards = cfg.schema.cardinalities
    values = []
    for k, (name, card) in enumerate(zip(names, cards)):
        n_distinct = max(1, min(card, 3 + cfg.n_users // 20))
        draws = rng.integers(0, n_distinct, size=cfg.n_users)
        values.append([f"{name}_{v}" for v in draws])
    return [tuple(values[k][u] for k in range(len(names))) for u in range(cfg.n_users)]


def _dense_ids(values):
    vocab = [dict() for _ in (values[0] if values else ())]
    out = []
    for row in values:
        ids = []
        for k, v in enumerate(row):
            ids.append(vocab[k].setdefault(v, len(vocab[k])))
        out.append(tuple(ids))
    return out


@dataclass
class SynthData:
    config: SynthConfig
    days: list  # [(day_index, [UserDayVector, ...]), ...]
    labels: LabelSet
    categorical_values: list  # directory strings per user
    daily_counts: list = field(repr=False, default_factory=list)  # (k, baseline, injected) per weekday


def generate(config: SynthConfig) -> SynthData:
    """Draw the user-day stream and its labels; deterministic in ``config.seed``."""
    cfg = config
    schema = cfg.schema
    rates = cfg.baseline_rates()
    rng = np.random.default_rng([cfg.seed, 1])
    cat_values = _category_values(cfg, np.random.default_rng([cfg.seed, 2]))
    cat_ids = _dense_ids(cat_values)
    users = cfg.user_ids()
    mats = _UseMatrices(schema)
    pools = _PoolState(cfg.n_users, schema.common_threshold)
    by_day = {}
    for inj in cfg.injections:
        by_day.setdefault(inj.day, []).append(inj)

    known = np.zeros(cfg.n_users, dtype=bool)
    days, daily = [], []
    labels = set()
    for k in range(cfg.n_days):
        lam = rates * cfg.weekly[k % 5]
        x = rng.poisson(lam).astype(np.int64)
        has_common = pools.common > 0  # (U, P) at day start
        # a common-qualified event needs a common entity in every pool it names
        feasible = ((mats.common[None, :, :] == 0) | has_common[:, None, :]).all(axis=2)
        x[~feasible] = 0
        extra = np.zeros_like(x)
        for inj in by_day.get(k, ()):
            for f in inj.features:
                if not feasible[inj.user, f]:
                    raise SynthError(
                        f"injection on user {inj.user} day {k}: feature {f} needs a common "
                        "entity the user does not have yet"
                    )
                extra[inj.user, f] += math.ceil(inj.multiplier * math.sqrt(max(lam[inj.user, f], 1.0)))
            labels.add((users[inj.user], cfg.day_index(k)))
        # neutral uses fall on the primary common entity when there is one
        warming = x @ mats.uncommon + (x @ mats.neutral) * (~has_common)
        pools.advance(warming)
        total = x + extra
        active = total.sum(axis=1) > 0
        known |= active
        daily.append((k, x, extra, has_common))
        if not known.any() or not active.any():
            continue
        d = cfg.day_index(k)
        vecs = [UserDayVector(users[u], d, total[u], cat_ids[u]) for u in np.flatnonzero(known)]
        days.append((d, vecs))
    return SynthData(cfg, days, LabelSet(labels), cat_values, daily)


def plan_injections(config: SynthConfig, count, seed=0, features_per=3, multiplier=(6.0, 10.0),
                    first_day=20, min_rate=1.0):
    """Random feasible injections on distinct user-days of ``config``'s stream.

    Features are drawn among those the user's baseline rate puts at or above
    ``min_rate`` (so the sigma-equivalent multiplier is meaningful) and whose
    common-entity requirements the user meets that day. Feasibility is read
    from an injection-free run, which injections cannot alter.
    """
    from dataclasses import replace

    rng = np.random.default_rng([seed, 3])
    base = generate(replace(config, injections=()))
    mats = _UseMatrices(config.schema)
    rates = config.baseline_rates()
    active = rates >= min_rate
    slots = [(u, k) for k in range(first_day, config.n_days) for u in range(config.n_users)
             if active[u].sum() >= features_per]
    out = []
    used = set()
    while len(out) < count:
        if len(used) == len(slots):
            raise SynthError("not enough eligible user-days for the requested injections")
        p = int(rng.integers(len(slots)))
        if p in used:
            continue
        used.add(p)
        u, k = slots[p]
        has_common = base.daily_counts[k][3][u]
        feasible = ((mats.common == 0) | has_common[None, :]).all(axis=1) & active[u]
        candidates = np.flatnonzero(feasible)
        if candidates.size < features_per:
            continue
        feats = tuple(int(f) for f in sorted(rng.choice(candidates, size=features_per, replace=False)))
        out.append(Injection(u, k, feats, float(rng.uniform(*multiplier))))
    return tuple(sorted(out, key=lambda i: (i.day, i.user)))


# --------------------------------------------------------------------------- emission

def _entity(pool, user, n, injected=False):
    family, kind = POOLS[pool]
    tag = f"{user}{'i' if injected else ''}{n}"
    if family == "pc":
        return f"pc-{tag}"
    if family == "file":
        return f"{'decoy-' if kind == 'decoy' else ''}doc-{tag}.docx"
    if family == "domain":
        return f"site-{tag}.com"
    if kind == "internal":
        return f"contact-{tag}@{ORG_DOMAIN}"
    return f"contact-{tag}@mail-{user}.net"


class _Replay:
    """Entity picker that mirrors the pool accounting of ``generate``."""

    def __init__(self, n_users, threshold):
        self.k = threshold
        self.base = [[[0, 0] for _ in POOLS] for _ in range(n_users)]  # [common, warm uses]
        self.inj = [[[0, 0] for _ in POOLS] for _ in range(n_users)]

    def pick(self, u, pool, status, has_common, injected):
        if status == COMMON or (status == NEUTRAL and has_common):
            return 0, False
        state = (self.inj if injected else self.base)[u][pool]
        n = state[0]
        state[1] += 1
        if state[1] == self.k:
            state[0] += 1
            state[1] = 0
        return n, injected


def _unique_seconds(rng, lo, hi, n, taken):
    out = []
    while len(out) < n:
        s = int(rng.integers(lo, hi))
        if s not in taken:
            taken.add(s)
            out.append(s)
    return out


def _event_row(source, action, ts, user, pc, attrs):
    stamp = ts.strftime(DATE_FORMAT)
    act = _ACTIVITY_TEXT[action]
    if source is Source.LOGON:
        return [stamp, user, pc, act]
    if source is Source.DEVICE:
        return [stamp, user, pc, "", act]
    if source is Source.FILE:
        return [stamp, user, pc, attrs["filename"], act, str(attrs["to_rem"]), str(attrs["from_rem"]), ""]
    if source is Source.HTTP:
        return [stamp, user, pc, attrs["url"], act, ""]
    return [stamp, user, pc, ";".join(attrs["to"]), "", ";".join(attrs["bcc"]), attrs["from"], act,
            str(attrs["size"]), attrs["attachments"], ""]


def _attrs_for(desc, entity_of, user_email):
    q = dict(desc.qualifiers)
    a = {}
    if desc.source is Source.FILE:
        a["filename"] = entity_of("file")
        media = q.get("media", "local")
        a["to_rem"] = media == "to_removable"
        a["from_rem"] = media == "from_removable"
    elif desc.source is Source.HTTP:
        a["url"] = f"http://{entity_of('domain')}/index.html"
    elif desc.source is Source.EMAIL:
        peer = entity_of("addr")
        n_att = {"none": 0, "one": 1, "multiple": 2}[q.get("attachments", "none")]
        a["attachments"] = ";".join(f"att{i}.pdf" for i in range(n_att))
        a["size"] = 1000 + 500 * n_att
        if desc.action is Action.EMAIL_SEND:
            a["to"] = [peer]
            a["bcc"] = [peer] if q.get("bcc") == "yes" else []
            a["from"] = user_email
        else:
            a["to"] = [user_email]
            a["bcc"] = []
            a["from"] = peer
    return a


def emit_raw_logs(config: SynthConfig, out_dir, data: SynthData | None = None):
    """Write the five source CSVs, the directory, the decoy list and labels to ``out_dir``.

    Returns a per-source event count summary (also written as ``summary.json``).
    """
    cfg = config
    schema = cfg.schema
    if len(schema.categorical_specs) != len(CATEGORY_NAMES):
        raise SynthError(f"log emission needs the {len(CATEGORY_NAMES)} directory categoricals")
    if data is None:
        data = generate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    users = cfg.user_ids()
    emails = [f"{u.lower()}@{ORG_DOMAIN}" for u in users]
    _write_directory(out / "LDAP.csv", users, emails, data.categorical_values)

    mats = _UseMatrices(schema)
    replay = _Replay(cfg.n_users, schema.common_threshold)
    rng = np.random.default_rng([cfg.seed, 4])
    files = {s: open(out / f"{s.value}.csv", "w", newline="") for s in Source}
    writers = {s: csv.writer(fh) for s, fh in files.items()}
    for s, w in writers.items():
        w.writerow(SOURCE_COLUMNS[s])
    counts = {s.value: 0 for s in Source}
    weekend_counts = {s.value: 0 for s in Source}
    decoys = set()
    serial = 0
    n_desc = schema.n_descriptors
    try:
        for k, base, extra, has_common in data.daily_counts:
            day = cfg.origin + timedelta(days=cfg.day_index(k))
            rows = []
            for u in range(cfg.n_users):
                nz = np.flatnonzero(base[u] + extra[u])
                if not nz.size:
                    continue
                taken = set()
                events = []
                for f in nz:
                    w, j = divmod(int(f), n_desc)
                    win = schema.windows[w]
                    n_total = int(base[u, f] + extra[u, f])
                    secs = _unique_seconds(rng, win.start * 60, win.end * 60, n_total, taken)
                    flags = [False] * int(base[u, f]) + [True] * int(extra[u, f])
                    events.extend((s, int(f), inj) for s, inj in zip(secs, flags))
                events.sort()
                for sec, f, injected in events:
                    d = schema.descriptors[f % n_desc]
                    picks = {}
                    for pool, status in mats.uses[f]:
                        n, inj_pool = replay.pick(u, pool, status, bool(has_common[u, pool]), injected)
                        picks[POOLS[pool][0]] = _entity(pool, u, n, inj_pool)
                    if "file" in picks and dict(d.qualifiers).get("decoy") == "yes":
                        decoys.add(picks["file"])
                    attrs = _attrs_for(d, picks.__getitem__, emails[u])
                    ts = datetime.combine(day, datetime.min.time()) + timedelta(seconds=sec)
                    rows.append((ts, d.source, _event_row(d.source, d.action, ts, users[u],
                                                          picks["pc"], attrs)))
            if k % 5 == 4 and cfg.weekend_activity > 0:
                rows.extend(_weekend_rows(cfg, rng, day, users, emails))
            rows.sort(key=lambda r: r[0])
            for ts, source, row in rows:
                serial += 1
                writers[source].writerow([f"{{{source.value[0].upper()}{serial:08d}}}", *row])
                if ts.weekday() < 5:
                    counts[source.value] += 1
                else:
                    weekend_counts[source.value] += 1
    finally:
        for fh in files.values():
            fh.close()

    with open(out / "decoy_file.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["decoy_filename", "pc"])
        for name in sorted(decoys):
            w.writerow([name, ""])
    from insider_stream.eval import write_labels

    labels_out = LabelSet({(u, d) for u, d in data.labels})
    write_labels(out / "labels.csv", labels_out)
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    summary = {
        "users": cfg.n_users,
        "weekdays": cfg.n_days,
        "weekday_events": counts,
        "weekend_events": weekend_counts,
        "total_events": sum(counts.values()) + sum(weekend_counts.values()),
        "threat_user_days": len(data.labels),
        "user_days": sum(len(v) for _, v in data.days),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _weekend_rows(cfg, rng, friday, users, emails):
    """Weekend logons and web visits on throwaway entities; the weekday filter drops them."""
    rows = []
    for offset in (1, 2):
        day = friday + timedelta(days=offset)
        for u in range(cfg.n_users):
            n = int(rng.poisson(cfg.weekend_activity))
            for s in sorted(rng.integers(0, 86400, size=n).tolist()):
                ts = datetime.combine(day, datetime.min.time()) + timedelta(seconds=s)
                pc = f"pc-weekend-{u}"
                if rng.random() < 0.5:
                    rows.append((ts, Source.LOGON,
                                 _event_row(Source.LOGON, Action.LOGON, ts, users[u], pc, {})))
                else:
                    rows.append((ts, Source.HTTP,
                                 _event_row(Source.HTTP, Action.HTTP_VISIT, ts, users[u], pc,
                                            {"url": f"http://weekend-{u}.com/"})))
    return rows


def _write_directory(path, users, emails, cat_values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIRECTORY_COLUMNS)
        for u, (uid, email) in enumerate(zip(users, emails)):
            role, project, funit, dept, team, sup = cat_values[u]
            w.writerow([f"Synthetic User {u}", uid, email, role, project, "1",
                        funit, dept, team, sup])


def summary_table(summary):
    """Plain-text event-count table for a synth summary."""
    lines = [f"{'source':<8} {'weekday':>10} {'weekend':>10}"]
    for s in Source:
        lines.append(f"{s.value:<8} {summary['weekday_events'][s.value]:>10} "
                     f"{summary['weekend_events'][s.value]:>10}")
    lines.append(f"{'total':<8} {summary['total_events']:>21}")
    lines.append(f"users {summary['users']}, weekdays {summary['weekdays']}, "
                 f"user-days {summary['user_days']}, threat user-days {summary['threat_user_days']}")
    return "\n".join(lines)
