"""Anomaly as negative log probability, and its per-feature decomposition."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
PROB_FLOOR = 1e-12
MAX_CATEGORICAL_NLL = -math.log(PROB_FLOOR)
LOG_VAR_BOUND = 8.0  # model log-variances lie in (-8, 8)
LOG_VAR_BOUNDS = (-LOG_VAR_BOUND, LOG_VAR_BOUND)


@dataclass
class DistributionParams:
    """Predicted distribution over one user-day: Gaussian counts plus categoricals."""

    mu: np.ndarray
    log_var: np.ndarray | None = None
    categorical_probs: list | None = None

    @property
    def sigma(self):
        if self.log_var is None:
            return np.ones_like(self.mu)
        return np.exp(0.5 * self.log_var)


def gaussian_terms(x, mu, log_var=None):
    """Per-dimension NLL terms ``0.5[(x-mu)^2/var + log var + log 2pi]`` (broadcasts over batches)."""
    r = np.asarray(x, dtype=np.float64) - mu
    if log_var is None:
        return 0.5 * (r * r + LOG_2PI)
    return 0.5 * (r * r * np.exp(-log_var) + log_var + LOG_2PI)


def gaussian_nll(x, dp: DistributionParams):
    """``-log N(x; mu, Sigma)`` with identity or diagonal Sigma; returns ``(total, terms)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != dp.mu.shape:
        raise ValueError(f"observation shape {x.shape} != mean shape {dp.mu.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite observation")
    terms = gaussian_terms(x, dp.mu, dp.log_var)
    return float(np.sum(terms)), terms


def categorical_nll(index, probs):
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= index < probs.shape[-1]:
        raise IndexError(f"category id {index} out of range for {probs.shape[-1]} classes")
    return -math.log(max(float(probs[index]), PROB_FLOOR))


def categorical_nll_from_logprobs(logp, ids):
    """Batched ``-log p[id]`` from log-probabilities, with the probability floor applied."""
    rows = np.arange(logp.shape[0])
    return np.minimum(-logp[rows, ids], MAX_CATEGORICAL_NLL)


@dataclass
class Contributor:
    index: int
    contribution: float  # signed standardized residual (x - mu) / sigma
    label: str = ""

    def to_dict(self):
        return {"index": self.index, "contribution": self.contribution, "label": self.label}


@dataclass
class AnomalyRecord:
    user_id: str
    day_index: int
    raw_score: float | None
    standardized_score: float | None = None
    components: dict = field(default_factory=dict)
    top_contributors: list = field(default_factory=list)
    rank: int | None = None

    @property
    def scored(self):
        return self.raw_score is not None

    def to_dict(self):
        return {
            "user": self.user_id,
            "day": self.day_index,
            "raw": self.raw_score,
            "standardized": self.standardized_score,
            "rank": self.rank,
            "components": self.components,
            "top_contributors": [c.to_dict() for c in self.top_contributors],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            user_id=d["user"],
            day_index=int(d["day"]),
            raw_score=d.get("raw"),
            standardized_score=d.get("standardized"),
            components=dict(d.get("components") or {}),
            top_contributors=[Contributor(c["index"], c["contribution"], c.get("label", ""))
                              for c in d.get("top_contributors") or ()],
            rank=d.get("rank"),
        )

    @classmethod
    def from_json(cls, line):
        return cls.from_dict(json.loads(line))


def decode_contributor(index, schema):
    """Human label ``"<window> | <activity>"`` of a count feature."""
    return schema.label(index)


def top_contributors(x, dp: DistributionParams, k=10, schema=None):
    residual = (np.asarray(x, dtype=np.float64) - dp.mu) / dp.sigma
    k = min(k, residual.size)
    # stable order: by |residual| descending, then by index
    order = np.lexsort((np.arange(residual.size), -np.abs(residual)))[:k]
    return [Contributor(int(i), float(residual[i]),
                        decode_contributor(int(i), schema) if schema is not None else "")
            for i in order]


def anomaly(x, dp: DistributionParams, categoricals=(), categorical_names=None,
            schema=None, top_k=10, user_id="", day_index=0) -> AnomalyRecord:
    """Unstandardized AnomalyRecord for one observation.

    ``x`` is a count vector or a UserDayVector; categorical terms are added
    only when ``dp.categorical_probs`` is present.
    """
    if hasattr(x, "counts"):
        user_id, day_index = x.user_id, x.day_index
        categoricals = x.categoricals
        x = x.counts
    total, _ = gaussian_nll(x, dp)
    components = {"counts": total}
    raw = total
    if dp.categorical_probs is not None:
        names = categorical_names or [f"cat{k}" for k in range(len(dp.categorical_probs))]
        for name, cid, probs in zip(names, categoricals, dp.categorical_probs):
            nll = categorical_nll(int(cid), probs)
            components[name] = nll
            raw += nll
    return AnomalyRecord(
        user_id=user_id,
        day_index=day_index,
        raw_score=raw,
        components=components,
        top_contributors=top_contributors(x, dp, top_k, schema),
    )
