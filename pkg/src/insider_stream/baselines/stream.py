"""Day-barrier streaming harness for the baselines.

Each day is scored with the model fitted on earlier days only, then added to
the trailing window. Records carry the same fields and standardization as the
neural trainer's, so evaluation treats every detector alike.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from insider_stream.baselines.iforest import IsolationForest
from insider_stream.baselines.pca import PcaModel
from insider_stream.density import AnomalyRecord, Contributor
from insider_stream.trainer import EwmaStats, standardize_day

logger = logging.getLogger(__name__)

KINDS = ("pca", "iforest")


@dataclass
class BaselineConfig:
    kind: str = "pca"
    window: int = 60  # trailing days used for each refit
    refresh: int = 10  # days between refits
    min_history: int = 10  # days needed before the first fit
    k: int = 10
    decay: float = 1.0
    n_trees: int = 100
    sample_size: int = 256
    bootstrap: bool = False
    contamination: float = 0.1
    seed: int = 0
    ewma_alpha: float = 0.02
    top_k: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.refresh < 1 or self.window < 1 or self.min_history < 1:
            raise ValueError("window, refresh and min_history must be positive")

    def to_dict(self):
        return asdict(self)


def baseline_stream(days, config: BaselineConfig, schema=None):
    """Yield one list of AnomalyRecords per input ``(day_index, vectors)`` group.

    Days before the first fit produce unscored records (``raw_score`` None).
    """
    cfg = config
    pca = None
    forest = None
    window: deque = deque(maxlen=cfg.window)  # iforest keeps raw day matrices
    ewma = EwmaStats(alpha=cfg.ewma_alpha)
    seen = 0
    since_fit = None
    n_fits = 0
    for day_index, vectors in days:
        vectors = sorted(vectors, key=lambda v: v.user_id)
        if len({v.user_id for v in vectors}) != len(vectors):
            raise ValueError(f"duplicate user on day {day_index}")
        x = np.array([v.counts for v in vectors], dtype=np.float64)
        if x.size and pca is None and cfg.kind == "pca":
            pca = PcaModel(x.shape[1], k=min(cfg.k, x.shape[1]), decay=cfg.decay, window=cfg.window)

        due = seen >= cfg.min_history and (since_fit is None or since_fit >= cfg.refresh)
        if due:
            if cfg.kind == "pca":
                pca.fit()
            else:
                forest = IsolationForest(cfg.n_trees, cfg.sample_size, cfg.contamination,
                                         seed=cfg.seed + n_fits, bootstrap=cfg.bootstrap)
                forest.fit(np.concatenate(list(window)))
            n_fits += 1
            since_fit = 0
            logger.debug("day %d: %s refit %d", day_index, cfg.kind, n_fits)

        records = []
        fitted = since_fit is not None
        if fitted and len(vectors):
            if cfg.kind == "pca":
                resid = pca.residuals(x)
                scores = np.sum(resid * resid, axis=1)
            else:
                scores = forest.score(x)
            for i, v in enumerate(vectors):
                contribs = []
                if cfg.kind == "pca":
                    r = resid[i]
                    order = np.lexsort((np.arange(r.size), -np.abs(r)))[:cfg.top_k]
                    contribs = [Contributor(int(j), float(r[j]),
                                            schema.label(int(j)) if schema is not None else "")
                                for j in order]
                records.append(AnomalyRecord(v.user_id, v.day_index, float(scores[i]),
                                             components={cfg.kind: float(scores[i])},
                                             top_contributors=contribs))
            zs, ewma = standardize_day(ewma, [r.raw_score for r in records])
            for r, z in zip(records, zs):
                r.standardized_score = z
        else:
            records = [AnomalyRecord(v.user_id, v.day_index, None) for v in vectors]

        if len(vectors):
            if cfg.kind == "pca":
                pca.add_day(x)
            else:
                window.append(x)
            seen += 1
        if since_fit is not None:
            since_fit += 1
        yield records
