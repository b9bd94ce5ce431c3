"""Reconstruction error against the top principal subspace of a decayed covariance."""

from __future__ import annotations

from collections import deque

import numpy as np

from insider_stream import kernels


class NotFittedError(RuntimeError):
    pass


class PcaModel:
    """Top-``k`` principal components of an exponentially decayed covariance.

    History is kept as per-day sufficient statistics ``(n, sum x, sum x x^T)``
    over a trailing window; a day ``a`` days old gets weight ``decay**a``.
    """

    def __init__(self, dim, k=10, decay=1.0, window=60, tol=1e-10):
        if not 1 <= k <= dim:
            raise ValueError(f"k must lie in [1, {dim}]")
        if not 0.0 < decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        self.dim = dim
        self.k = k
        self.decay = decay
        self.window = window
        self.tol = tol
        self.days: deque = deque(maxlen=window)
        self.mean = None
        self.components = None  # (dim, k), orthonormal columns
        self.eigenvalues = None
        self._basis = None  # full eigenvector matrix, reused as a warm start
        self.fits = 0

    @property
    def fitted(self):
        return self.components is not None

    @property
    def history(self):
        return len(self.days)

    def add_day(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.dim)
        self.days.append((x.shape[0], x.sum(axis=0), x.T @ x))

    def covariance(self):
        if not self.days:
            raise NotFittedError("no history to fit on")
        n = 0.0
        s = np.zeros(self.dim)
        ss = np.zeros((self.dim, self.dim))
        for age, (cnt, s_day, ss_day) in enumerate(reversed(self.days)):
            w = self.decay ** age
            n += w * cnt
            s += w * s_day
            ss += w * ss_day
        mean = s / n
        cov = ss / n - np.outer(mean, mean)
        return mean, 0.5 * (cov + cov.T)

    def fit(self):
        mean, cov = self.covariance()
        w, v, _ = kernels.jacobi_eigh(cov, tol=self.tol, v0=self._basis)
        order = np.argsort(-w, kind="stable")
        self._basis = v[:, order]
        self.mean = mean
        self.eigenvalues = w[order]
        self.components = self._basis[:, :self.k].copy()
        self.fits += 1
        return self

    def projector(self):
        if not self.fitted:
            raise NotFittedError("PCA model has not been fitted")
        return self.components @ self.components.T

    def residuals(self, x):
        if not self.fitted:
            raise NotFittedError("PCA model has not been fitted")
        c = np.asarray(x, dtype=np.float64) - self.mean
        return c - (c @ self.components) @ self.components.T

    def score(self, x):
        r = self.residuals(x)
        return np.sum(r * r, axis=-1)


def pca_score(x, model: PcaModel):
    """Squared reconstruction error ``||(x - m) - P P^T (x - m)||^2``."""
    return model.score(x)
