"""Bandit learners: projection-free BCO, its unregularized variant, FKM,
stochastic online conditional gradient, and the doubling-trick wrapper.

All learners follow the same protocol: ``query()`` returns the point to play,
then ``update(observed, gradient=None)`` consumes the loss seen there.  Only
learners with ``needs_gradient = True`` read ``gradient``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimator import SmoothingParams
from .geometry import ConstraintSet, GeometryError, sample_unit_sphere

FEAS_TOL = 1e-9


class ProtocolError(RuntimeError):
    """``query`` and ``update`` were not called alternately."""


class InvariantViolation(AssertionError):
    """A run-time check from the regret analysis failed."""


def default_sigma(t):
    return t ** -0.4


# ---------------------------------------------------------------------------
# parameters


@dataclass
class PfbcoParams:
    """Step weight ``eta``, smoothing radius ``delta``, shrink ``alpha`` and the
    blending schedule ``sigma(t)`` for a horizon ``T``."""

    T: int
    eta: float
    delta: float
    alpha: float
    c: float = math.nan
    sigma_schedule: Callable[[int], float] = default_sigma

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha = {self.alpha} must lie in [0, 1)")
        if self.delta < 0 or self.eta < 0:
            raise ValueError("eta and delta must be nonnegative")

    @classmethod
    def theorem(cls, T, n, M, D, r, c=None, eta=None, delta=None, sigma_schedule=default_sigma):
        """eta = D / (sqrt(2) n M) T^(-4/5), delta = c T^(-1/5), alpha = delta / r.

        ``c`` defaults to ``r / 2`` so that ``alpha <= 1/2`` for every T.
        """
        c = r / 2.0 if c is None else float(c)
        if eta is None:
            eta = D / (math.sqrt(2.0) * n * M) * T ** -0.8
        if delta is None:
            delta = c * T ** -0.2
        return cls(T=T, eta=eta, delta=delta, alpha=delta / r, c=c, sigma_schedule=sigma_schedule)

    def sigma(self, t):
        return self.sigma_schedule(t)


@dataclass
class FkmParams:
    T: int
    eta: float
    delta: float
    alpha: float

    @classmethod
    def classical(cls, T, n, M, D, r, eta=None, delta=None):
        """eta = (D / (n M)) T^(-3/4) r, delta = T^(-1/4) min(r, 1) / 2,
        alpha = delta / r."""
        if eta is None:
            eta = D / (n * M) * T ** -0.75 * r
        if delta is None:
            delta = T ** -0.25 * min(r, 1.0) / 2.0
        return cls(T=T, eta=eta, delta=delta, alpha=delta / r)


# ---------------------------------------------------------------------------
# state + protocol


@dataclass
class PfbcoState:
    x: np.ndarray
    x1: np.ndarray
    grad_sum: np.ndarray
    t: int = 1
    last_u: np.ndarray | None = None


@dataclass
class RoundRecord:
    """What a diagnostic run keeps about round t."""

    t: int
    x: np.ndarray
    grad_sum: np.ndarray  # sum of estimates before round t
    g: np.ndarray
    v: np.ndarray
    sigma: float


class BanditLearner:
    needs_gradient = False
    epoch = 0

    def __init__(self, constraint: ConstraintSet, rng):
        self.constraint = constraint
        self.rng = rng
        self._pending = False

    def query(self):
        if self._pending:
            raise ProtocolError("query() called twice without update()")
        self._pending = True
        return self._query()

    def update(self, observed, gradient=None):
        if not self._pending:
            raise ProtocolError("update() called without a pending query()")
        self._pending = False
        self._update(observed, gradient)

    def _query(self):
        raise NotImplementedError

    def _update(self, observed, gradient):
        raise NotImplementedError

    @property
    def x(self):
        """Current iterate x_t."""
        raise NotImplementedError

    @property
    def iterate_set(self):
        """The set that must contain every x_t."""
        return self.constraint


def _start_point(iterate_set, x1):
    if x1 is None:
        x1 = iterate_set.default_start()
    x1 = np.asarray(x1, dtype=float).ravel().copy()
    if x1.shape[0] != iterate_set.n:
        raise GeometryError("x1 has the wrong dimension")
    if not iterate_set.contains(x1, FEAS_TOL):
        raise GeometryError("x1 is not in the shrunken set")
    return x1


# ---------------------------------------------------------------------------
# projection-free BCO


class Pfbco(BanditLearner):
    """Follow-the-regularized-leader on one-point estimates, approximated by a
    single linear minimization and a convex-combination step per round.

    The direction at round t uses the estimates of rounds 1..t-1 only; g_t is
    committed after the LMO call.
    """

    regularized = True

    def __init__(
        self,
        constraint,
        params: PfbcoParams,
        rng,
        x1=None,
        check_step_size=False,
        record=False,
        warm_start=True,
    ):
        super().__init__(constraint, rng)
        self.params = params
        self.shrunk = constraint.shrink(params.alpha)
        x1 = _start_point(self.shrunk, x1)
        self.state = PfbcoState(x=x1.copy(), x1=x1, grad_sum=np.zeros_like(x1))
        self.smoothing = SmoothingParams(params.delta, constraint.n) if params.delta > 0 else None
        self.check_step_size = check_step_size
        self.records: list[RoundRecord] | None = [] if record else None
        self._ones = np.ones(constraint.n)
        self._start = None
        self._warm = warm_start and hasattr(constraint.base, "lmo_warm")

    @property
    def x(self):
        return self.state.x

    @property
    def iterate_set(self):
        return self.shrunk

    def _query(self):
        st = self.state
        n = self.constraint.n
        st.last_u = sample_unit_sphere(n, self.rng)
        return st.x + self.params.delta * st.last_u

    def estimate(self, observed):
        if self.smoothing is None:
            return np.zeros_like(self.state.x)
        return (self.smoothing.scale * observed) * self.state.last_u

    def direction(self):
        st = self.state
        d = self.params.eta * st.grad_sum
        if self.regularized:
            d = d + 2.0 * (st.x - st.x1)
        return d

    def _lmo(self, d):
        if not d.any():
            d = self._ones
        if self._warm:
            # the previous right singular vector seeds the next power iteration
            v, self._start = self.shrunk.lmo_warm(d, self._start)
            return v
        return self.shrunk.lmo(d)

    def _blend(self, v):
        st = self.state
        s = self.params.sigma(st.t)
        st.x = (1.0 - s) * st.x + s * v
        return s

    def _commit(self, g):
        st = self.state
        if self.check_step_size:
            self._check_step(g)
        st.grad_sum = st.grad_sum + g

    def _check_step(self, g):
        lhs = math.sqrt(2.0 * self.constraint.D**2 * self.params.sigma(self.state.t))
        rhs = self.params.eta * float(np.linalg.norm(g)) / 2.0
        if lhs < rhs:
            raise InvariantViolation(
                f"step-size inequality fails at t={self.state.t}: sqrt(2 D^2 sigma)={lhs:.6g} < eta|g|/2={rhs:.6g}"
            )

    def _update(self, observed, gradient):
        st = self.state
        g = self.estimate(observed)
        d = self.direction()
        v = self._lmo(d)
        if self.records is not None:
            rec = RoundRecord(st.t, st.x.copy(), st.grad_sum.copy(), g.copy(), v, 0.0)
        s = self._blend(v)
        self._commit(g)
        if self.records is not None:
            rec.sigma = s
            self.records.append(rec)
        st.t += 1


class Unregularized(Pfbco):
    """Pfbco without the ``||x - x_1||^2`` anchor in the FTRL objective."""

    regularized = False


class StochOCG(Pfbco):
    """Online conditional gradient fed exact gradients plus N(0, noise_std^2)
    noise per coordinate.  Full information: plays ``y_t = x_t``.

    It keeps the shrink ``alpha`` of ``params`` so its iterates share pfbco's
    set; losses undefined on the boundary of K (log-wealth) stay finite."""

    needs_gradient = True

    def __init__(self, constraint, params: PfbcoParams, rng, noise_std, x1=None, **kw):
        params = PfbcoParams(T=params.T, eta=params.eta, delta=0.0, alpha=params.alpha, c=params.c,
                             sigma_schedule=params.sigma_schedule)
        super().__init__(constraint, params, rng, x1=x1, **kw)
        self.noise_std = float(noise_std)

    def _query(self):
        return self.state.x.copy()

    def estimate(self, observed):
        raise RuntimeError("StochOCG consumes gradients, not loss values")

    def _update(self, observed, gradient):
        if gradient is None:
            raise ProtocolError("StochOCG.update needs the exact gradient")
        st = self.state
        g = np.asarray(gradient, dtype=float) + self.noise_std * self.rng.standard_normal(st.x.shape[0])
        d = self.direction()
        v = self._lmo(d)
        self._blend(v)
        self._commit(g)
        st.t += 1


# ---------------------------------------------------------------------------
# FKM


class FKM(BanditLearner):
    """Projected online gradient descent on one-point estimates."""

    def __init__(self, constraint, params: FkmParams, rng, x1=None):
        super().__init__(constraint, rng)
        self.params = params
        self.shrunk = constraint.shrink(params.alpha)
        self._x = _start_point(self.shrunk, x1)
        self.smoothing = SmoothingParams(params.delta, constraint.n)
        self._u = None
        self.t = 1

    @property
    def x(self):
        return self._x

    @property
    def iterate_set(self):
        return self.shrunk

    def _query(self):
        self._u = sample_unit_sphere(self.constraint.n, self.rng)
        return self._x + self.params.delta * self._u

    def _update(self, observed, gradient):
        g = (self.smoothing.scale * observed) * self._u
        self._x = self.shrunk.project(self._x - self.params.eta * g)
        self.t += 1


# ---------------------------------------------------------------------------
# doubling trick


def epoch_of(t):
    """Epoch m serving global round t (1-based): 2^m <= t < 2^(m+1)."""
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    return t.bit_length() - 1


class DoublingWrapper(BanditLearner):
    """Anytime learner: restarts ``factory(2**m)`` at every round t = 2^m."""

    def __init__(self, factory: Callable[[int], BanditLearner]):
        self.factory = factory
        self._pending = False
        self.t = 0
        self.epoch = -1
        self.inner: BanditLearner | None = None
        self.restarts: list[int] = []

    @property
    def needs_gradient(self):
        return self.inner.needs_gradient if self.inner is not None else self.factory(1).needs_gradient

    @property
    def constraint(self):
        return self.inner.constraint

    @property
    def inner_round(self):
        return self.t - (1 << self.epoch) + 1

    @property
    def x(self):
        return self.inner.x

    @property
    def iterate_set(self):
        return self.inner.iterate_set

    def _begin_round(self):
        self.t += 1
        m = epoch_of(self.t)
        if m != self.epoch:
            self.epoch = m
            self.inner = self.factory(1 << m)
            self.restarts.append(self.t)

    def query(self):
        if self._pending:
            raise ProtocolError("query() called twice without update()")
        self._begin_round()
        self._pending = True
        return self.inner.query()

    def update(self, observed, gradient=None):
        if not self._pending:
            raise ProtocolError("update() called without a pending query()")
        self._pending = False
        self.inner.update(observed, gradient)


def doubling_wrap(factory):
    return DoublingWrapper(factory)
