"""Online score-then-train loop over a day-ordered stream of user-day vectors.

Each day every user is scored with the current shared weights, the score is
standardized against an exponentially weighted running mean and variance,
and only then is the sample used for its single gradient update. Users are
batched in id order, so a run is deterministic given its input and seed.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from insider_stream.density import AnomalyRecord, top_contributors
from insider_stream.model import (
    CheckpointError,
    Model,
    ModelConfig,
    SampleGroup,
    load_npz,
    save_npz_atomic,
)
from insider_stream.numerics import AdamState, NonFiniteGradient, adam_step

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8


@dataclass
class EwmaStats:
    mean: float = 0.0
    variance: float = VARIANCE_FLOOR
    alpha: float = 0.02
    count: int = 0
    floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.variance = max(self.variance, self.floor)

    def standardize(self, value):
        return (value - self.mean) / math.sqrt(self.variance)

    def to_dict(self):
        return {"mean": self.mean, "variance": self.variance, "alpha": self.alpha,
                "count": self.count, "floor": self.floor}


def ewma_update(stats: EwmaStats, value):
    """Standardize ``value`` against ``stats``, then fold it in.

    Returns ``(z, new_stats)``; ``stats`` itself is not modified. The first
    observation of an unseeded statistic seeds the mean and returns 0.
    """
    value = float(value)
    if not math.isfinite(value):
        raise ValueError("ewma_update needs a finite value")
    if stats.count == 0:
        return 0.0, replace(stats, mean=value, variance=stats.floor, count=1)
    z = stats.standardize(value)
    a = stats.alpha
    mean = (1.0 - a) * stats.mean + a * value
    var = (1.0 - a) * stats.variance + a * (value - stats.mean) ** 2
    return z, replace(stats, mean=mean, variance=max(var, stats.floor), count=stats.count + 1)


def standardize_day(stats: EwmaStats, values):
    """Standardize one day's scores against the statistic as it stood at day start.

    Scores are then folded in the given order. Using a single snapshot keeps
    the day's ranking identical to the raw-score ranking. Returns
    ``(z values, new stats)``.
    """
    values = [float(v) for v in values]
    if not values:
        return [], stats
    zs = [None] * len(values)
    start = 0
    if stats.count == 0:
        zs[0], stats = ewma_update(stats, values[0])
        start = 1
    snapshot = stats
    for k in range(start, len(values)):
        zs[k] = snapshot.standardize(values[k])
        _, stats = ewma_update(stats, values[k])
    return zs, stats


@dataclass
class UserState:
    """Per-user context: recent inputs plus LSTM states at the window boundary."""

    buffer: deque = field(default_factory=deque)  # (counts, cats) of recent days
    h0: np.ndarray | None = None  # (L, H) boundary states, treated as constants
    c0: np.ndarray | None = None
    last_day: int = -1

    def nbytes(self):
        n = sum(c.nbytes + np.asarray(k).nbytes for c, k in self.buffer)
        if self.h0 is not None:
            n += self.h0.nbytes + self.c0.nbytes
        return n


class UserStateStore:
    """At most one UserState per user, with inactivity and capacity eviction."""

    def __init__(self, evict_after=60, capacity=None):
        self.evict_after = evict_after
        self.capacity = capacity
        self.states: dict[str, UserState] = {}
        self.evictions = 0

    def __len__(self):
        return len(self.states)

    def __contains__(self, user):
        return user in self.states

    def get(self, user, factory):
        st = self.states.get(user)
        if st is None:
            st = self.states[user] = factory()
        return st

    def evict_inactive(self, day_index):
        if self.evict_after is None:
            return 0
        stale = [u for u, s in self.states.items()
                 if s.last_day >= 0 and day_index - s.last_day > self.evict_after]
        for u in stale:
            del self.states[u]
        if self.capacity is not None and len(self.states) > self.capacity:
            by_age = sorted(self.states, key=lambda u: (self.states[u].last_day, u))
            for u in by_age[:len(self.states) - self.capacity]:
                del self.states[u]
                stale.append(u)
        self.evictions += len(stale)
        return len(stale)

    def nbytes(self):
        return sum(s.nbytes() for s in self.states.values())


@dataclass
class TrainerCounters:
    samples: int = 0
    forward_passes: int = 0
    updates: int = 0
    skipped_batches: int = 0
    days: int = 0


class OnlineTrainer:
    """Prequential trainer over shared weights with per-user state.

    ``per_user_ewma`` switches standardization from one population statistic
    to one statistic per user; ``learn=False`` scores with frozen weights.
    """

    def __init__(self, model: Model, schema=None, ewma_alpha=0.02, per_user_ewma=False,
                 evict_after=60, store_capacity=None, learn=True, top_k=10):
        self.model = model
        self.config: ModelConfig = model.config
        self.schema = schema
        if schema is not None and schema.count_dim != self.config.count_dim:
            raise ValueError(
                f"schema has {schema.count_dim} count features, model expects {self.config.count_dim}"
            )
        self.store = UserStateStore(evict_after, store_capacity)
        self.ewma_alpha = ewma_alpha
        self.per_user_ewma = per_user_ewma
        self.ewma = EwmaStats(alpha=ewma_alpha)
        self.user_ewma: dict[str, EwmaStats] = {}
        self.adam = AdamState(learning_rate=self.config.learning_rate)
        self.learn = learn
        self.top_k = top_k
        self.counters = TrainerCounters()
        self.last_day = None

    # ---------------------------------------------------------------- state
    @property
    def buffer_cap(self):
        """Past inputs kept per user (the LSTM window, or one for the DNN's previous day)."""
        cfg = self.config
        if cfg.encoder == "dnn":
            return 1 if cfg.target_mode == "next" else 0
        return cfg.bptt_window if cfg.target_mode == "next" else cfg.bptt_window - 1

    def _new_state(self):
        st = UserState()
        if self.config.encoder == "lstm":
            L, H = self.config.layers, self.config.hidden_dim
            st.h0, st.c0 = np.zeros((L, H)), np.zeros((L, H))
        return st

    def _inputs(self, st: UserState, counts, cats):
        """Input sequence for one sample under the configured target mode."""
        seq = list(st.buffer)
        if self.config.target_mode == "same":
            seq.append((counts, cats))
        return seq

    # ---------------------------------------------------------------- groups
    def _build_groups(self, items):
        """Group ``(position, state, counts, cats)`` by sequence length."""
        n_cat = len(self.config.categoricals)
        by_len: dict[int, list] = {}
        for pos, st, counts, cats in items:
            seq = self._inputs(st, counts, cats)
            by_len.setdefault(len(seq), []).append((pos, st, seq, counts, cats))
        groups = []
        for T in sorted(by_len):
            members = by_len[T]
            B = len(members)
            cs = np.zeros((B, T, self.config.count_dim))
            ks = np.zeros((B, T, n_cat), dtype=np.int64)
            for b, (_, _, seq, _, _) in enumerate(members):
                for t, (c, k) in enumerate(seq):
                    cs[b, t] = c
                    ks[b, t] = k
            h0 = c0 = None
            if self.config.encoder == "lstm":
                h0 = np.stack([m[1].h0 for m in members], axis=1)
                c0 = np.stack([m[1].c0 for m in members], axis=1)
            g = SampleGroup(
                counts_seq=cs,
                cats_seq=ks,
                target_counts=np.stack([m[3] for m in members]).astype(np.float64),
                target_cats=np.array([m[4] for m in members], dtype=np.int64).reshape(B, n_cat),
                h0=h0,
                c0=c0,
            )
            groups.append(([m[0] for m in members], g))
        return groups

    def _record(self, vec, res, i):
        cat_names = self.model.cat_names
        raw = float(res.nll[i])
        if not math.isfinite(raw):
            return AnomalyRecord(vec.user_id, vec.day_index, None)
        components = {"counts": float(res.count_nll[i])}
        for k, name in enumerate(cat_names):
            components[name] = float(res.cat_nll[i, k])
        dp = res.distribution(i)
        return AnomalyRecord(
            user_id=vec.user_id,
            day_index=vec.day_index,
            raw_score=raw,
            components=components,
            top_contributors=top_contributors(vec.counts, dp, self.top_k, self.schema),
        )

    # ---------------------------------------------------------------- main loop
    def _cats(self, vec):
        n_cat = len(self.config.categoricals)
        cats = tuple(vec.categoricals)[:n_cat]
        if len(cats) < n_cat:
            cats = cats + tuple(c for _, c in self.config.categoricals[len(cats):])
        return cats

    def process_day(self, vectors):
        """Score, standardize and train on one day's vectors; returns AnomalyRecords in user order."""
        if not vectors:
            return []
        day = vectors[0].day_index
        if any(v.day_index != day for v in vectors):
            raise ValueError("process_day needs vectors from a single day")
        if self.last_day is not None and day <= self.last_day:
            raise ValueError(f"day {day} does not follow day {self.last_day}")
        users = [v.user_id for v in vectors]
        if len(set(users)) != len(users):
            raise ValueError(f"duplicate user on day {day}")
        vectors = sorted(vectors, key=lambda v: v.user_id)
        self.store.evict_inactive(day)

        records = []
        bs = self.config.batch_size
        for start in range(0, len(vectors), bs):
            chunk = vectors[start:start + bs]
            states = [self.store.get(v.user_id, self._new_state) for v in chunk]
            packed = [(pos, st, v.counts.astype(np.float64), self._cats(v))
                      for pos, (v, st) in enumerate(zip(chunk, states))]
            groups = self._build_groups(packed)
            chunk_records = [None] * len(chunk)
            grads = None
            total = 0.0
            for positions, g in groups:
                res = self.model.forward_backward(g, grad=self.learn)
                self.counters.forward_passes += g.size
                total += float(res.nll.sum())
                for b, pos in enumerate(positions):
                    chunk_records[pos] = self._record(chunk[pos], res, b)
                if self.learn:
                    if grads is None:
                        grads = {k: np.zeros_like(p) for k, p in self.model.params.items()}
                    for k, v in res.grads.items():
                        grads[k] += v
            # boundary states advance with the weights that scored this batch
            for v, st, (_, _, counts, cats) in zip(chunk, states, packed):
                self._advance(st, counts, cats, day)
            if self.learn:
                self._update(grads, total, len(chunk), day)
            records.extend(chunk_records)
            self.counters.samples += len(chunk)

        self._standardize(records)
        self.counters.days += 1
        self.last_day = day
        return records

    def _advance(self, st: UserState, counts, cats, day):
        st.last_day = day
        cap = self.buffer_cap
        if cap == 0:
            return
        st.buffer.append((counts, cats))
        while len(st.buffer) > cap:
            old_counts, old_cats = st.buffer.popleft()
            if self.config.encoder == "lstm":
                x = self.model.encoder_input(old_counts[None, :],
                                             np.asarray(old_cats, dtype=np.int64)[None, :])
                _, h, c = self.model.lstm_step(x, st.h0[:, None, :], st.c0[:, None, :])
                st.h0, st.c0 = h[:, 0, :], c[:, 0, :]

    def _update(self, grads, total, n, day):
        if not math.isfinite(total):
            logger.warning("day %d: non-finite loss, skipping batch update", day)
            self.counters.skipped_batches += 1
            return
        for v in grads.values():
            v /= n
        try:
            adam_step(self.model.params, grads, self.adam)
        except NonFiniteGradient as exc:
            logger.warning("day %d: %s, skipping batch update", day, exc)
            self.counters.skipped_batches += 1
            return
        self.counters.updates += 1

    def _standardize(self, records):
        scored = [r for r in records if r.scored]
        if self.per_user_ewma:
            for r in scored:
                stats = self.user_ewma.get(r.user_id) or EwmaStats(alpha=self.ewma_alpha)
                r.standardized_score, self.user_ewma[r.user_id] = ewma_update(stats, r.raw_score)
        else:
            zs, self.ewma = standardize_day(self.ewma, [r.raw_score for r in scored])
            for r, z in zip(scored, zs):
                r.standardized_score = z

    def run(self, days):
        """Process ``(day_index, vectors)`` groups; yields each day's records."""
        for _, vectors in days:
            yield self.process_day(vectors)

    # ---------------------------------------------------------------- persistence
    def checkpoint(self, path):
        """Write the full run state (weights, optimizer, user store, EWMA) atomically."""
        arrays = {f"param/{k}": v for k, v in self.model.params.items()}
        for k, v in self.adam.m.items():
            arrays[f"adam_m/{k}"] = v
            arrays[f"adam_v/{k}"] = self.adam.v[k]
        users = {}
        for u, st in self.store.states.items():
            users[u] = {"last_day": st.last_day, "buffer": len(st.buffer)}
            for j, (c, k) in enumerate(st.buffer):
                arrays[f"user/{u}/counts/{j}"] = np.asarray(c)
                arrays[f"user/{u}/cats/{j}"] = np.asarray(k, dtype=np.int64)
            if st.h0 is not None:
                arrays[f"user/{u}/h0"] = st.h0
                arrays[f"user/{u}/c0"] = st.c0
        meta = {
            "kind": "trainer",
            "config": self.config.to_dict(),
            "schema_hash": self.schema.hash() if self.schema is not None else None,
            "adam_step": self.adam.step,
            "ewma": self.ewma.to_dict(),
            "user_ewma": {u: s.to_dict() for u, s in self.user_ewma.items()},
            "per_user_ewma": self.per_user_ewma,
            "users": users,
            "evictions": self.store.evictions,
            "counters": vars(self.counters),
            "last_day": self.last_day,
            "learn": self.learn,
        }
        save_npz_atomic(path, arrays, meta)

    @classmethod
    def restore(cls, path, schema=None, **kwargs):
        arrays, meta = load_npz(path, kind="trainer")
        if schema is not None and meta.get("schema_hash") not in (None, schema.hash()):
            raise CheckpointError(
                f"{path}: checkpoint schema {meta['schema_hash']} != current schema {schema.hash()}"
            )
        cfg = ModelConfig.from_dict(meta["config"])
        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        kwargs.setdefault("per_user_ewma", meta.get("per_user_ewma", False))
        kwargs.setdefault("learn", meta.get("learn", True))
        tr = cls(Model(cfg, params), schema=schema, **kwargs)
        tr.adam.step = meta["adam_step"]
        for k in params:
            if f"adam_m/{k}" in arrays:
                tr.adam.m[k] = arrays[f"adam_m/{k}"]
                tr.adam.v[k] = arrays[f"adam_v/{k}"]
        tr.ewma = EwmaStats(**meta["ewma"])
        tr.ewma_alpha = tr.ewma.alpha
        tr.user_ewma = {u: EwmaStats(**s) for u, s in meta.get("user_ewma", {}).items()}
        for u, info in meta["users"].items():
            st = tr._new_state()
            st.last_day = info["last_day"]
            for j in range(info["buffer"]):
                st.buffer.append((arrays[f"user/{u}/counts/{j}"],
                                  tuple(int(c) for c in arrays[f"user/{u}/cats/{j}"])))
            if f"user/{u}/h0" in arrays:
                st.h0 = arrays[f"user/{u}/h0"]
                st.c0 = arrays[f"user/{u}/c0"]
            tr.store.states[u] = st
        tr.store.evictions = meta.get("evictions", 0)
        tr.counters = TrainerCounters(**meta["counters"])
        tr.last_day = meta["last_day"]
        return tr

