"""Loss families for the quadratic, portfolio and matrix-completion experiments.

Each single-round loss exposes ``value``, ``grad`` and a batched
``eval_many``.  A ``LossSequence`` holds a whole horizon as stacked arrays,
the constraint set it lives on, and the bound constants ``M`` (sup of |f|)
and ``G`` (sup of the gradient norm) used to tune the learners.
"""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

from .geometry import BoxPolytope, NuclearNormBall, ShiftedSimplex, sample_unit_sphere

BOUND_SAMPLES = 10_000
BOUND_SAFETY = 1.5


class DomainError(ValueError):
    """A loss was evaluated outside its domain."""


class LossDataError(ValueError):
    """Malformed input data (prices, shapes)."""


# ---------------------------------------------------------------------------
# single-round losses


class QuadraticLoss:
    """``f(x) = 0.5 x^T A x + w^T x + const`` with ``A`` symmetric PSD."""

    def __init__(self, A, w, const=0.0):
        self.A = np.asarray(A, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.const = float(const)

    @classmethod
    def from_factor(cls, G, w):
        G = np.asarray(G, dtype=float)
        return cls(G.T @ G, w)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.A @ x + self.w @ x + self.const)

    def grad(self, x):
        return self.A @ np.asarray(x, dtype=float) + self.w

    def eval_many(self, P):
        P = np.atleast_2d(P)
        return 0.5 * np.einsum("si,ij,sj->s", P, self.A, P) + P @ self.w + self.const

    def curvature(self, d):
        return float(d @ self.A @ d)

    __call__ = value


class PortfolioLoss:
    """``f(x) = -log(r^T x)`` for one day's price ratios ``r``.

    With ``shifted=True`` the argument is ``y = 2n x - 1`` on the shifted
    simplex instead of ``x`` itself.
    """

    def __init__(self, ratio, shifted=False):
        self.ratio = np.asarray(ratio, dtype=float)
        if np.any(self.ratio <= 0):
            raise LossDataError("price ratios must be positive")
        self.n = self.ratio.shape[-1]
        self.shifted = shifted
        self._scale = 1.0 / (2 * self.n) if shifted else 1.0

    def _x(self, y):
        y = np.asarray(y, dtype=float)
        return (y + 1.0) * self._scale if self.shifted else y

    def value(self, y):
        wealth = float(self.ratio @ self._x(y))
        if wealth <= 0:
            raise DomainError(f"r^T x = {wealth} is not positive")
        return -math.log(wealth)

    def grad(self, y):
        wealth = float(self.ratio @ self._x(y))
        if wealth <= 0:
            raise DomainError(f"r^T x = {wealth} is not positive")
        return -self.ratio * (self._scale / wealth)

    def eval_many(self, P):
        wealth = self._x(np.atleast_2d(P)) @ self.ratio
        if np.any(wealth <= 0):
            raise DomainError("r^T x is not positive at a sampled point")
        return -np.log(wealth)

    __call__ = value


class MatrixCompletionLoss:
    """``f(X) = 0.5 * sum over observed (i, j) of (X[i, j] - M[i, j])^2``.

    ``X`` arrives flattened row-major; ``mask`` marks the observed entries.
    """

    def __init__(self, target, mask):
        self.target = np.asarray(target, dtype=float)
        self.shape = self.target.shape
        self.mask = np.asarray(mask, dtype=bool).reshape(self.shape)
        self._t = self.target.ravel()
        self._m = self.mask.ravel().astype(float)

    def value(self, x):
        r = (np.asarray(x, dtype=float).ravel() - self._t) * self._m
        return float(0.5 * r @ r)

    def grad(self, x):
        return (np.asarray(x, dtype=float).ravel() - self._t) * self._m

    def eval_many(self, P):
        r = (np.atleast_2d(P) - self._t) * self._m
        return 0.5 * np.einsum("si,si->s", r, r)

    __call__ = value


class DiagonalQuadratic:
    """``0.5 sum h_i x_i^2 + b^T x + const``; the running sum of
    matrix-completion losses has this form."""

    def __init__(self, h, b, const=0.0):
        self.h = np.asarray(h, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.const = float(const)

    def value(self, x):
        return float(0.5 * self.h @ (x * x) + self.b @ x + self.const)

    def grad(self, x):
        return self.h * x + self.b

    def curvature(self, d):
        return float(self.h @ (d * d))


class PortfolioTotal:
    """Sum of shifted portfolio losses over a block of days."""

    def __init__(self, ratios):
        self.ratios = np.atleast_2d(np.asarray(ratios, dtype=float))
        self.n = self.ratios.shape[1]
        self._scale = 1.0 / (2 * self.n)

    def value(self, y):
        wealth = self.ratios @ ((np.asarray(y) + 1.0) * self._scale)
        if np.any(wealth <= 0):
            return math.inf
        return float(-np.log(wealth).sum())

    def grad(self, y):
        wealth = self.ratios @ ((np.asarray(y) + 1.0) * self._scale)
        return -(self.ratios.T @ (1.0 / wealth)) * self._scale


# ---------------------------------------------------------------------------
# sequences


class LossSequence:
    """A horizon of losses over one constraint set.  Rounds are 0-indexed here;
    traces number them from 1."""

    name = "losses"

    def __init__(self, constraint):
        self.constraint = constraint
        self.M = math.nan
        self.G = math.nan

    def __len__(self):
        raise NotImplementedError

    def __getitem__(self, i):
        raise NotImplementedError

    def value(self, i, x):
        return self[i].value(x)

    def gradient(self, i, x):
        return self[i].grad(x)

    def value_pairs(self, rounds, points):
        raise NotImplementedError

    def gradient_pairs(self, rounds, points):
        raise NotImplementedError

    def total(self, stop=None):
        """Loss object for ``f_0 + ... + f_{stop-1}``."""
        raise NotImplementedError

    def _arrays(self):
        raise NotImplementedError

    def checksum(self):
        h = hashlib.sha256()
        for arr in self._arrays():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def estimate_bounds(self, rng, samples=BOUND_SAMPLES, safety=BOUND_SAFETY, constraint=None, regions=None):
        """Set ``M`` and ``G`` from ``samples`` random (feasible point, round)
        pairs, inflated by ``safety``.  Points outside the loss domain are
        skipped.

        ``regions`` is an optional list of ``(set, radius)`` pairs; the sample
        is split evenly over them and each point is a point of ``set`` moved
        by ``radius`` in a uniform random direction.  Use it to sample where
        learners actually play, e.g. a shrunken set plus the smoothing radius.
        """
        if regions is None:
            regions = [(self.constraint if constraint is None else constraint, 0.0)]
        counts = [samples // len(regions) + (i < samples % len(regions)) for i in range(len(regions))]
        blocks = []
        for (region, radius), count in zip(regions, counts):
            pts = region.sample_points(count, rng)
            if radius > 0:
                pts = pts + radius * sample_unit_sphere(region.n, rng, count)
            blocks.append(pts)
        points = np.vstack(blocks)
        rounds = rng.integers(len(self), size=points.shape[0])
        vals = self.value_pairs(rounds, points)
        grads = self.gradient_pairs(rounds, points)
        ok = np.isfinite(vals) & np.all(np.isfinite(grads), axis=1)
        if not ok.any():
            raise DomainError("no sampled point lies in the loss domain")
        self.M = safety * float(np.abs(vals[ok]).max())
        self.G = safety * float(np.linalg.norm(grads[ok], axis=1).max())
        return self.M, self.G


class QuadraticSequence(LossSequence):
    name = "quadratic"

    def __init__(self, G, w, constraint):
        super().__init__(constraint)
        self.G_factors = np.asarray(G, dtype=float)
        self.A = np.einsum("tki,tkj->tij", self.G_factors, self.G_factors)
        self.w = np.asarray(w, dtype=float)
        self.n = self.w.shape[1]

    def __len__(self):
        return self.w.shape[0]

    def __getitem__(self, i):
        return QuadraticLoss(self.A[i], self.w[i])

    def value(self, i, x):
        return float(0.5 * x @ self.A[i] @ x + self.w[i] @ x)

    def gradient(self, i, x):
        return self.A[i] @ x + self.w[i]

    def value_pairs(self, rounds, points):
        A = self.A[rounds]
        return 0.5 * np.einsum("si,sij,sj->s", points, A, points) + np.einsum("si,si->s", self.w[rounds], points)

    def gradient_pairs(self, rounds, points):
        return np.einsum("sij,sj->si", self.A[rounds], points) + self.w[rounds]

    def total(self, stop=None):
        stop = len(self) if stop is None else stop
        return QuadraticLoss(self.A[:stop].sum(axis=0), self.w[:stop].sum(axis=0))

    def _arrays(self):
        return (self.G_factors, self.w, getattr(self.constraint, "A", np.zeros(0)))


class PortfolioSequence(LossSequence):
    """Losses as functions of ``y`` on the shifted simplex."""

    name = "portfolio"

    def __init__(self, ratios, constraint=None):
        ratios = np.atleast_2d(np.asarray(ratios, dtype=float))
        if np.any(ratios <= 0) or not np.all(np.isfinite(ratios)):
            raise LossDataError("price ratios must be positive and finite")
        self.ratios = ratios
        self.n = ratios.shape[1]
        super().__init__(ShiftedSimplex(self.n) if constraint is None else constraint)
        self._scale = 1.0 / (2 * self.n)

    def __len__(self):
        return self.ratios.shape[0]

    def __getitem__(self, i):
        return PortfolioLoss(self.ratios[i], shifted=True)

    def value(self, i, y):
        wealth = float(self.ratios[i] @ (y + 1.0)) * self._scale
        if wealth <= 0:
            raise DomainError(f"r^T x = {wealth} is not positive")
        return -math.log(wealth)

    def gradient(self, i, y):
        wealth = float(self.ratios[i] @ (y + 1.0)) * self._scale
        if wealth <= 0:
            raise DomainError(f"r^T x = {wealth} is not positive")
        return -self.ratios[i] * (self._scale / wealth)

    def _wealth(self, rounds, points):
        return np.einsum("si,si->s", self.ratios[rounds], points + 1.0) * self._scale

    def value_pairs(self, rounds, points):
        wealth = self._wealth(rounds, points)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(wealth > 0, -np.log(np.where(wealth > 0, wealth, 1.0)), np.inf)

    def gradient_pairs(self, rounds, points):
        wealth = self._wealth(rounds, points)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(wealth > 0, self._scale / np.where(wealth > 0, wealth, 1.0), np.inf)
        return -self.ratios[rounds] * inv[:, None]

    def total(self, stop=None):
        stop = len(self) if stop is None else stop
        return PortfolioTotal(self.ratios[:stop])

    def _arrays(self):
        return (self.ratios,)


class MatrixSequence(LossSequence):
    name = "matrix_completion"

    def __init__(self, targets, masks, constraint):
        super().__init__(constraint)
        self.targets = np.asarray(targets, dtype=float)
        T = self.targets.shape[0]
        self.shape = self.targets.shape[1:]
        self.n = self.shape[0] * self.shape[1]
        self._t = self.targets.reshape(T, self.n)
        self.masks = np.asarray(masks, dtype=bool).reshape(T, self.n)
        self._m = self.masks.astype(float)

    def __len__(self):
        return self.targets.shape[0]

    def __getitem__(self, i):
        return MatrixCompletionLoss(self.targets[i], self.masks[i])

    def value(self, i, x):
        r = (x - self._t[i]) * self._m[i]
        return float(0.5 * r @ r)

    def gradient(self, i, x):
        return (x - self._t[i]) * self._m[i]

    def value_pairs(self, rounds, points):
        r = (points - self._t[rounds]) * self._m[rounds]
        return 0.5 * np.einsum("si,si->s", r, r)

    def gradient_pairs(self, rounds, points):
        return (points - self._t[rounds]) * self._m[rounds]

    def total(self, stop=None):
        stop = len(self) if stop is None else stop
        m = self._m[:stop]
        t = self._t[:stop]
        return DiagonalQuadratic(m.sum(axis=0), -(m * t).sum(axis=0), 0.5 * float(((m * t) ** 2).sum()))

    def _arrays(self):
        return (self._t, self.masks)


# ---------------------------------------------------------------------------
# generators


def gen_quadratic_sequence(n, T, rng, m=5):
    """Quadratic losses with standard normal ``G_t``, ``w_t`` on the polytope
    ``{0 <= x <= 1, A x <= 1}`` with ``A`` uniform on [0, 1]^(m x n)."""
    if n < 1 or T < 1:
        raise ValueError("n and T must be >= 1")
    A = rng.random((m, n))
    G = rng.standard_normal((T, n, n))
    w = rng.standard_normal((T, n))
    return QuadraticSequence(G, w, BoxPolytope(A, n=n))


def gen_price_ratios(n, T, rng, sigma=0.01):
    """Synthetic daily price ratios, ``log r ~ Normal(0, sigma^2)``."""
    if n < 1 or T < 1:
        raise ValueError("n and T must be >= 1")
    return PortfolioSequence(np.exp(sigma * rng.standard_normal((T, n))))


def read_price_csv(path):
    """Price table from a CSV file: one row per day, one column per stock,
    optional header row of tickers."""
    rows = []
    header_seen = False
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if rows or header_seen:
                    raise LossDataError(f"line {lineno}: non-numeric price") from None
                header_seen = True
    if len(rows) < 2:
        raise LossDataError("need at least two days of prices")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise LossDataError(f"ragged row {i + 1}: {len(row)} columns, expected {width}")
    prices = np.array(rows)
    if np.any(prices <= 0) or not np.all(np.isfinite(prices)):
        raise LossDataError("prices must be positive and finite")
    return prices


def ingest_price_csv(path):
    prices = read_price_csv(path)
    return PortfolioSequence(prices[1:] / prices[:-1])


def gen_matrix_sequence(n, k, T, rng):
    """``M_t = N_t^T N_t`` with standard normal ``N_t`` (k x n) and a fresh
    uniformly random mask of ``ceil(n^2 / 2)`` observed entries each round."""
    if k > n:
        raise ValueError("k must not exceed n")
    N = rng.standard_normal((T, k, n))
    targets = np.einsum("tki,tkj->tij", N, N)
    half = (n * n + 1) // 2
    order = np.argsort(rng.random((T, n * n)), axis=1)
    masks = np.zeros((T, n * n), dtype=bool)
    np.put_along_axis(masks, order[:, :half], True, axis=1)
    return MatrixSequence(targets, masks, NuclearNormBall(k, n))
