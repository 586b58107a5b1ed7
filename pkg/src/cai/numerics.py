"""Stable primitives: log-sum-exp aggregation and categorical sampling.

Everything that exponentiates a reward divided by a temperature goes
through :func:`logsumexp`, which uses max-subtraction so that small
temperatures (large ``r / beta``) stay finite.
"""

from __future__ import annotations

import numpy as np


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray | float:
    """Max-subtracted log(sum(exp(a))); tolerates -inf entries."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True) if a.size else np.float64(-np.inf)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    if np.ndim(out) == 0:
        return float(out)
    return out


def plogp(p: np.ndarray, logs: np.ndarray) -> np.ndarray:
    """p * logs with the convention 0 * (-inf) = 0."""
    return p * np.where(p > 0, logs, 0.0)


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    z = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def draw_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """One index draw from an explicit probability vector."""
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)


def draw_categorical_batch(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of a (k, n) probability matrix."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def systematic_resample(u0: float, weights: np.ndarray) -> np.ndarray:
    """Systematic resampling: parent indices for K offspring.

    ``u0`` is a single uniform in [0, 1); the stratified positions
    (i + u0)/K give the classic low-variance scheme.
    """
    k = len(weights)
    positions = (np.arange(k) + u0) / k
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0  # guard against round-off at the top
    parents = np.searchsorted(cdf, positions, side="right")
    return np.minimum(parents, k - 1)
