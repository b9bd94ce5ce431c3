"""Isolation forest with the usual path-length normalization."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from insider_stream import kernels


@lru_cache(maxsize=None)
def harmonic(n):
    return math.fsum(1.0 / i for i in range(1, n + 1))


def average_path_length(n):
    """``c(n) = 2 H(n-1) - 2 (n-1) / n``; zero for ``n <= 1``."""
    n = int(n)
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


class IsolationForest:
    def __init__(self, n_trees=100, sample_size=256, contamination=0.1, seed=0, bootstrap=False):
        if not 1 <= n_trees:
            raise ValueError("n_trees must be positive")
        if not 0.0 <= contamination <= 0.5:
            raise ValueError("contamination must lie in [0, 0.5]")
        self.n_trees = n_trees
        self.sample_size = sample_size
        self.contamination = contamination
        self.seed = seed
        self.bootstrap = bootstrap  # subsample with replacement
        self.trees = []
        self.psi = 0
        self.threshold = None

    @property
    def fitted(self):
        return bool(self.trees)

    @property
    def max_depth(self):
        return max(0, math.ceil(math.log2(self.psi))) if self.psi > 1 else 0

    def fit(self, x, seed=None):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("fit needs a nonempty 2-D window")
        rng = np.random.default_rng(self.seed if seed is None else seed)
        n = x.shape[0]
        self.psi = min(self.sample_size, n)
        self.trees = []
        for _ in range(self.n_trees):
            rows = np.sort(rng.choice(n, size=self.psi, replace=self.bootstrap)).astype(np.int64)
            u_feat = rng.random(2 * self.psi)
            u_split = rng.random(2 * self.psi)
            feature, threshold, left, right, size = kernels.build_itree(
                x, rows, u_feat, u_split, self.max_depth)
            adjust = np.array([average_path_length(s) if f < 0 else 0.0
                               for f, s in zip(feature, size)])
            self.trees.append((feature, threshold, left, right, adjust))
        if self.contamination > 0:
            self.threshold = float(np.quantile(self.score(x), 1.0 - self.contamination))
        return self

    def path_lengths(self, x):
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
        total = np.zeros(x.shape[0])
        for feature, threshold, left, right, adjust in self.trees:
            total += kernels.itree_path_lengths(x, feature, threshold, left, right, adjust)
        return total / len(self.trees)

    def score(self, x):
        """``2^(-E[h(x)] / c(psi))`` in (0, 1]; 0.5 everywhere when ``c(psi) = 0``."""
        if not self.fitted:
            raise RuntimeError("isolation forest has not been fitted")
        eh = self.path_lengths(x)
        c = average_path_length(self.psi)
        if c == 0.0:
            return np.full(eh.shape, 0.5)
        return np.power(2.0, -eh / c)

    def predict(self, x):
        """Flags scores above the contamination threshold."""
        if self.threshold is None:
            raise RuntimeError("no contamination threshold (contamination=0)")
        return self.score(x) > self.threshold
