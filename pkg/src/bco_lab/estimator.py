"""Smoothing and one-point gradient estimates.

``f_delta(x) = E_{v ~ B^n} f(x + delta v)`` and its gradient
``E_{u ~ S^n} (n / delta) f(x + delta u) u``.  The Monte-Carlo helpers exist
to check the single-sample estimate used by the learners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import sample_unit_ball, sample_unit_sphere

UNIT_TOL = 1e-9
CHUNK = 100_000


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothingParams:
    delta: float
    n: int

    def __post_init__(self):
        if not self.delta > 0:
            raise EstimatorError("delta must be positive")
        if self.n < 1:
            raise EstimatorError("n must be >= 1")

    @property
    def scale(self):
        return self.n / self.delta


@dataclass
class MCEstimate:
    """Sample mean with its standard error (same shape as the mean)."""

    mean: np.ndarray | float
    stderr: np.ndarray | float
    num_samples: int

    @property
    def stderr_norm(self):
        return float(np.linalg.norm(np.atleast_1d(self.stderr)))


def one_point_gradient(f_value, u, params):
    """``(n / delta) * f_value * u`` for a unit vector ``u``."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise EstimatorError("u must be a unit vector")
    return (params.scale * f_value) * u


def _batch_eval(loss, points):
    if hasattr(loss, "eval_many"):
        return np.asarray(loss.eval_many(points), dtype=float)
    return np.asarray(loss(points), dtype=float)


class _Moments:
    # Chan et al. pairwise merge of chunk means and sums of squares.
    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, block):
        k = block.shape[0]
        bmean = block.mean(axis=0)
        bm2 = ((block - bmean) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self.m2 = k, bmean, bm2
            return
        tot = self.count + k
        d = bmean - self.mean
        self.mean = self.mean + d * (k / tot)
        self.m2 = self.m2 + bm2 + d * d * (self.count * k / tot)
        self.count = tot

    def result(self):
        var = self.m2 / max(self.count - 1, 1)
        return MCEstimate(self.mean, np.sqrt(var / self.count), self.count)


def smoothed_value_mc(loss, x, delta, num_samples, rng):
    """Monte-Carlo estimate of ``f_delta(x)`` from uniform ball draws."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    acc = _Moments()
    left = num_samples
    while left > 0:
        k = min(CHUNK, left)
        vals = _batch_eval(loss, x + delta * sample_unit_ball(n, rng, k))
        acc.add(vals)
        left -= k
    est = acc.result()
    return MCEstimate(float(est.mean), float(est.stderr), est.num_samples)


def smoothed_gradient_mc(loss, x, delta, num_samples, rng):
    """Average of ``(n / delta) f(x + delta u) u`` over sphere draws."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    acc = _Moments()
    left = num_samples
    while left > 0:
        k = min(CHUNK, left)
        u = sample_unit_sphere(n, rng, k)
        vals = _batch_eval(loss, x + delta * u)
        acc.add((n / delta) * vals[:, None] * u)
        left -= k
    return acc.result()
