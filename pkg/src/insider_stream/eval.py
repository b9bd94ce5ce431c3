"""Budgeted recall, cumulative recall (CR-k) and per-day percentile bands."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import numpy as np

from insider_stream.density import AnomalyRecord

BUDGET_STEP = 25
BAND_QUANTILES = (5, 25, 50, 75, 95)


class EvalError(ValueError):
    pass


@dataclass
class LabelSet:
    """Threat user-days as ``(user_id, day_index)`` pairs."""

    days: set = field(default_factory=set)

    def __len__(self):
        return len(self.days)

    def __iter__(self):
        return iter(sorted(self.days))

    def __contains__(self, key):
        return key in self.days

    def restrict(self, day_range=None):
        if day_range is None:
            return self
        lo, hi = day_range
        return LabelSet({(u, d) for u, d in self.days if lo <= d <= hi})

    def unmatched(self, rankings):
        """Labels whose user-day is absent from the scored stream."""
        present = {(r.user_id, day) for day, recs in rankings.items() for r in recs}
        return sorted(self.days - present)


def _parse_date(text):
    for fmt in ("%Y-%m-%d", "%m/%d/%Y", "%m/%d/%Y %H:%M:%S"):
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise EvalError(f"unrecognized date {text!r}")


def load_labels(path, origin: date | None = None) -> LabelSet:
    """Read a ``user,day`` or ``user,date`` CSV; dates need ``origin`` (day 0)."""
    labels = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or ()
        if "user" not in cols or not ({"day", "date"} & set(cols)):
            raise EvalError(f"{path}: label file needs columns user,day or user,date")
        for row in reader:
            if "day" in cols and row["day"] not in (None, ""):
                day = int(row["day"])
            else:
                if origin is None:
                    raise EvalError(f"{path}: date labels need an origin date")
                day = (_parse_date(row["date"].strip()) - origin).days
            labels.add((row["user"].strip(), day))
    return LabelSet(labels)


def write_labels(path, labels: LabelSet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "day"])
        for u, d in labels:
            w.writerow([u, d])


def read_records(path):
    """AnomalyRecords from a JSON-lines file."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(AnomalyRecord.from_json(line))
    return out


def _sort_key(r: AnomalyRecord):
    std = r.standardized_score if r.standardized_score is not None else r.raw_score
    return (-std, -r.raw_score, r.user_id)


def rank_days(records) -> dict:
    """Per-day lists of records, most anomalous first, with ``rank`` set (1-based).

    Ties on the standardized score fall back to the raw score, then user id.
    Unscored records go last with ``rank`` None and never count as detected.
    """
    by_day: dict[int, list] = {}
    seen = set()
    for r in records:
        key = (r.user_id, r.day_index)
        if key in seen:
            raise EvalError(f"duplicate record for user {r.user_id} day {r.day_index}")
        seen.add(key)
        by_day.setdefault(r.day_index, []).append(r)
    out = {}
    for day in sorted(by_day):
        recs = by_day[day]
        scored = sorted((r for r in recs if r.scored), key=_sort_key)
        unscored = sorted((r for r in recs if not r.scored), key=lambda r: r.user_id)
        for i, r in enumerate(scored, 1):
            r.rank = i
        for r in unscored:
            r.rank = None
        out[day] = scored + unscored
    return out


def _ranks(rankings):
    return {(r.user_id, day): r.rank for day, recs in rankings.items() for r in recs}


def recall_at_budget(rankings, labels: LabelSet, budget, day_range=None):
    """Fraction of labeled user-days ranked within ``budget`` on their day."""
    if budget < 1:
        raise EvalError("budget must be at least 1")
    labels = labels.restrict(day_range)
    if not len(labels):
        raise EvalError("recall is undefined without labels")
    ranks = _ranks(rankings)
    hit = 0
    for key in labels:
        rank = ranks.get(key)
        if rank is not None and rank <= budget:
            hit += 1
    return hit / len(labels)


@dataclass
class RecallCurve:
    budgets: list
    recalls: list
    cr: float

    @property
    def k(self):
        return self.budgets[-1] if self.budgets else 0

    def to_dict(self):
        return {"k": self.k, "cr": self.cr, "budgets": self.budgets, "recalls": self.recalls}


def cr_k(rankings, labels: LabelSet, k=1000, step=BUDGET_STEP, day_range=None) -> RecallCurve:
    """Recall at budgets ``step, 2*step, ..., k`` and their sum."""
    if k < step or k % step:
        raise EvalError(f"k must be a positive multiple of {step}")
    labels = labels.restrict(day_range)
    if not len(labels):
        raise EvalError("recall is undefined without labels")
    ranks = _ranks(rankings)
    label_ranks = [ranks.get(key) for key in labels]
    budgets = list(range(step, k + 1, step))
    recalls = [sum(1 for r in label_ranks if r is not None and r <= b) / len(labels)
               for b in budgets]
    return RecallCurve(budgets, recalls, float(sum(recalls)))


def percentile_of(score, scores):
    """Share of ``scores`` at or below ``score``, in percent."""
    scores = np.asarray(scores, dtype=np.float64)
    return 100.0 * np.count_nonzero(scores <= score) / scores.size


@dataclass
class DayBands:
    day: int
    n: int
    minimum: float
    quantiles: tuple
    maximum: float
    labeled: list  # (user, standardized score, percentile)


def percentile_bands(records, labels: LabelSet | None = None, day_range=None):
    """Per-day min, 5/25/50/75/95th percentiles and max of standardized scores."""
    labels = labels or LabelSet()
    by_day: dict[int, list] = {}
    for r in records:
        if r.scored and r.standardized_score is not None:
            if day_range is None or day_range[0] <= r.day_index <= day_range[1]:
                by_day.setdefault(r.day_index, []).append(r)
    out = []
    for day in sorted(by_day):
        recs = by_day[day]
        s = np.array([r.standardized_score for r in recs])
        q = tuple(float(v) for v in np.percentile(s, BAND_QUANTILES))
        labeled = [(r.user_id, r.standardized_score, percentile_of(r.standardized_score, s))
                   for r in recs if (r.user_id, day) in labels]
        out.append(DayBands(day, len(recs), float(s.min()), q, float(s.max()), labeled))
    return out


def mean_label_percentile(bands):
    vals = [p for b in bands for _, _, p in b.labeled]
    return float(np.mean(vals)) if vals else float("nan")


def write_recall_csv(path, curve: RecallCurve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["budget", "recall"])
        for b, r in zip(curve.budgets, curve.recalls):
            w.writerow([b, repr(r)])


def write_bands_csv(path, bands):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "n", "min", *(f"p{q}" for q in BAND_QUANTILES), "max",
                    "labeled_users", "labeled_percentiles"])
        for b in bands:
            w.writerow([b.day, b.n, repr(b.minimum), *map(repr, b.quantiles), repr(b.maximum),
                        ";".join(u for u, _, _ in b.labeled),
                        ";".join(repr(p) for _, _, p in b.labeled)])


def evaluate(records, labels: LabelSet, k=1000, step=BUDGET_STEP, day_range=None):
    """Rankings, curve, bands and a JSON-ready summary for one detector's output."""
    rankings = rank_days(records)
    if day_range is not None:
        rankings = {d: r for d, r in rankings.items() if day_range[0] <= d <= day_range[1]}
    restricted = labels.restrict(day_range)
    curve = cr_k(rankings, restricted, k, step)
    bands = percentile_bands(records, restricted, day_range)
    summary = {
        "k": k,
        "cr": curve.cr,
        "max_cr": k / step,
        "n_labels": len(restricted),
        "unmatched_labels": [list(x) for x in restricted.unmatched(rankings)],
        "mean_label_percentile": mean_label_percentile(bands),
        "day_range": list(day_range) if day_range is not None else None,
        "recall": dict(zip(map(str, curve.budgets), curve.recalls)),
    }
    return rankings, curve, bands, summary


def write_summary_json(path, summary):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
