"""Constraint sets with linear minimization oracles and projections.

Every set is a convex body in R^n stored together with a center ``c`` and
constants ``r <= R`` such that ``c + rB^n ⊆ K ⊆ c + RB^n``, plus an upper
bound ``D`` on its diameter.  Shrinking by ``(1 - alpha)`` is taken about the
center, so ``c + alpha*r*S^n`` perturbations of a shrunken point stay in K.
For origin-centered sets this is the usual ``(1 - alpha)K``.
"""

from __future__ import annotations

import math
import warnings

import numba
import numpy as np

DEFAULT_TOL = 1e-9

POWER_MAX_ITER = 200
POWER_RTOL = 1e-10
POWER_SQUARINGS = 5
POWER_SEED = 20190517


class GeometryError(ValueError):
    """Raised on malformed sets or inputs of the wrong dimension."""


class ProjectionError(RuntimeError):
    """Raised when an iterative projector does not meet its tolerance."""


class PowerIterationWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# sampling


def sample_unit_sphere(n, rng, size=None):
    """Uniform draw(s) from the unit sphere S^n by normalizing Gaussians.

    Returns shape ``(n,)`` when ``size`` is None, else ``(size, n)``.
    """
    if n < 1:
        raise GeometryError("dimension must be >= 1")
    if size is None:
        while True:
            z = rng.standard_normal(n)
            nrm2 = z @ z
            if nrm2 > 0.0:
                return z / math.sqrt(nrm2)
    z = rng.standard_normal((size, n))
    norms = np.linalg.norm(z, axis=1)
    bad = norms == 0.0
    while bad.any():  # measure-zero event; redraw those rows
        z[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(z, axis=1)
        bad = norms == 0.0
    z /= norms[:, None]
    return z


def sample_unit_ball(n, rng, size=None):
    """Uniform draw(s) from the unit ball B^n: sphere point times U^(1/n)."""
    u = sample_unit_sphere(n, rng, size)
    if size is None:
        return u * rng.random() ** (1.0 / n)
    return u * (rng.random(size) ** (1.0 / n))[:, None]


# ---------------------------------------------------------------------------
# dense simplex


def simplex_max(c, A, b, max_iter=10_000, eps=1e-12):
    """Maximize ``c @ x`` subject to ``A @ x <= b``, ``x >= 0`` with ``b >= 0``.

    Tableau simplex started from the slack basis.  Dantzig pricing, switching
    to Bland's rule after the first degenerate pivot so it cannot cycle.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if np.any(b < 0):
        raise GeometryError("simplex_max needs a nonnegative right-hand side")
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = A
    tab[:m, n : n + m] = np.eye(m)
    tab[:m, -1] = b
    tab[m, :n] = -c
    basis = np.arange(n, n + m)
    bland = False
    for _ in range(max_iter):
        reduced = tab[m, :-1]
        if bland:
            entering = np.flatnonzero(reduced < -eps)
            if entering.size == 0:
                break
            j = entering[0]
        else:
            j = int(np.argmin(reduced))
            if reduced[j] >= -eps:
                break
        col = tab[:m, j]
        pos = col > eps
        if not pos.any():
            raise GeometryError("linear program is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + eps)
        i = ties[np.argmin(basis[ties])]
        if best <= eps:
            bland = True
        piv = tab[i] / tab[i, j]
        factor = tab[:, j].copy()
        factor[i] = 0.0
        tab -= np.outer(factor, piv)
        tab[i] = piv
        basis[i] = j
    else:
        raise GeometryError("simplex did not terminate")
    x = np.zeros(n + m)
    x[basis] = tab[:m, -1]
    return x[:n]


# ---------------------------------------------------------------------------
# power iteration


@numba.njit(cache=True)
def _power_kernel(mat, v, max_iter, rtol, squarings):
    b = np.dot(np.ascontiguousarray(mat.T), mat)
    fro = math.sqrt(np.sum(b * b))
    if fro == 0.0:
        return np.zeros(mat.shape[0]), 0.0, v, True
    # eigenvalues of b / fro lie in [1/sqrt(rank), 1], so 2**squarings-th powers stay normal
    b = b / fro
    for _ in range(squarings):
        b = np.dot(b, b)
    if squarings > 0:
        b = b / math.sqrt(np.sum(b * b))
    prev = -1.0
    converged = False
    for _ in range(max_iter):
        w = np.dot(b, v)
        lam = math.sqrt(np.dot(w, w))
        if lam == 0.0:
            break
        v = w / lam
        if abs(lam - prev) <= rtol * lam:
            converged = True
            break
        prev = lam
    w = np.dot(mat, v)
    s = math.sqrt(np.dot(w, w))
    if s > 0.0:
        u = w / s
    else:
        u = np.zeros(mat.shape[0])
    return u, s, v, converged


_KERNEL_READY = False


def _warm_kernel():
    # compile (or load the cached) kernel now, not inside a timed round
    global _KERNEL_READY
    if not _KERNEL_READY:
        _power_kernel(np.eye(2), np.ones(2), 1, 0.0, 0)
        _KERNEL_READY = True


def top_singular_pair(mat, max_iter=POWER_MAX_ITER, rtol=POWER_RTOL, start=None, squarings=POWER_SQUARINGS):
    """Leading singular triple ``(u, s, v)`` of ``mat`` by power iteration on
    ``mat.T @ mat``.

    The Gram matrix is squared ``squarings`` times first (renormalized), so
    one iteration applies ``2**squarings`` plain power steps; this matters
    when the top two singular values are close.  Stops when the iteration's
    eigenvalue changes by less than ``rtol`` relatively, or after
    ``max_iter`` iterations.  The start vector is deterministic unless
    ``start`` is given.  Returns a fourth element ``converged``;
    non-convergence also raises a ``PowerIterationWarning``.
    """
    mat = np.ascontiguousarray(mat, dtype=float)
    if start is None:
        v = np.random.default_rng(POWER_SEED).standard_normal(mat.shape[1])
    else:
        v = np.array(start, dtype=float)
    v /= math.sqrt(v @ v)
    u, s, v, converged = _power_kernel(mat, v, int(max_iter), float(rtol), int(squarings))
    if not converged:
        warnings.warn("power iteration did not converge", PowerIterationWarning, stacklevel=2)
    return u, float(s), v, bool(converged)


# ---------------------------------------------------------------------------
# sets


def _vec(x, n):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != n:
        raise GeometryError(f"expected dimension {n}, got {x.shape[0]}")
    return x


class ConstraintSet:
    """Base class; subclasses fill in the oracles and the geometry constants."""

    n: int
    r: float
    R: float
    D: float
    center: np.ndarray

    def lmo(self, direction):
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    def violation(self, x):
        """Largest amount by which ``x`` breaks a defining constraint (>= 0)."""
        raise NotImplementedError

    def contains(self, x, tol=DEFAULT_TOL):
        if tol < 0:
            raise GeometryError("tol must be nonnegative")
        return self.violation(x) <= tol

    def shrink(self, alpha):
        return ShrunkenSet(self, alpha)

    @property
    def base(self):
        return self

    @property
    def alpha(self):
        return 0.0

    def default_start(self):
        return self.center.copy()

    def vertices(self, count, rng):
        """LMO responses to ``count`` Gaussian directions."""
        return np.array([self.lmo(d) for d in rng.standard_normal((count, self.n))])

    def sample_points(self, count, rng):
        """Feasible points spread over the set: LMO vertices, random convex
        combinations of up to 8 vertices with the center, and the center itself."""
        n_vert = max(1, count // 4)
        pool = self.vertices(max(n_vert, 2 * self.n + 2), rng)
        out = np.empty((count, self.n))
        out[:n_vert] = pool[rng.integers(len(pool), size=n_vert)]
        rest = count - n_vert
        if rest:
            k = min(len(pool), self.n + 1, 8)
            idx = np.array([rng.choice(len(pool), size=k, replace=False) for _ in range(rest)])
            w = rng.dirichlet(np.ones(k + 1), size=rest)
            out[n_vert:] = np.einsum("sk,skn->sn", w[:, :k], pool[idx]) + w[:, k:] * self.center
        out[-1] = self.center
        return out


class Ball(ConstraintSet):
    """Euclidean ball of the given radius centered at the origin."""

    def __init__(self, n, radius=1.0):
        if n < 1 or radius <= 0:
            raise GeometryError("Ball needs n >= 1 and radius > 0")
        self.n = int(n)
        self.radius = float(radius)
        self.r = self.R = self.radius
        self.D = 2.0 * self.radius
        self.center = np.zeros(self.n)

    def __repr__(self):
        return f"Ball(n={self.n}, radius={self.radius})"

    def lmo(self, direction):
        d = _vec(direction, self.n)
        norm = np.linalg.norm(d)
        if norm == 0.0:
            return np.zeros(self.n)
        return -self.radius * d / norm

    def project(self, x):
        x = _vec(x, self.n)
        norm = np.linalg.norm(x)
        return x if norm <= self.radius else x * (self.radius / norm)

    def violation(self, x):
        return max(0.0, float(np.linalg.norm(_vec(x, self.n))) - self.radius)

    def sample_points(self, count, rng):
        return self.radius * sample_unit_ball(self.n, rng, count)


class BoxPolytope(ConstraintSet):
    """``{x : 0 <= x <= 1, A x <= 1}``.

    The center is the Chebyshev center (largest inscribed ball), found with
    the same simplex routine as the LMO.  ``R`` is the distance from the
    center to the farthest corner of the unit box, and ``D`` is
    ``min(sqrt(n), 2R)``; both are upper bounds for the polytope itself.
    """

    def __init__(self, A=None, n=None, dykstra_tol=1e-9, dykstra_max_sweeps=10_000):
        if A is None or np.size(A) == 0:
            if n is None:
                raise GeometryError("BoxPolytope needs A or n")
            A = np.zeros((0, int(n)))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if n is not None and A.shape[1] != n:
            raise GeometryError("A has the wrong number of columns")
        self.A = A
        self.n = A.shape[1]
        self.m = A.shape[0]
        self._lp_A = np.vstack([np.eye(self.n), A])
        self._lp_b = np.ones(self.n + self.m)
        self.dykstra_tol = dykstra_tol
        self.dykstra_max_sweeps = dykstra_max_sweeps
        self.center, self.r = self._chebyshev()
        if self.r <= 0:
            raise GeometryError("polytope has empty interior")
        self.R = float(np.linalg.norm(np.maximum(self.center, 1.0 - self.center)))
        self.D = float(min(math.sqrt(self.n), 2.0 * self.R))
        self._row_norm2 = np.einsum("ij,ij->i", A, A)

    def __repr__(self):
        return f"BoxPolytope(n={self.n}, m={self.m})"

    def _chebyshev(self):
        n = self.n
        norms = np.linalg.norm(self.A, axis=1)
        # variables (c, rho) >= 0: c + rho <= 1, rho - c <= 0, A c + |a| rho <= 1
        rows = [
            np.hstack([np.eye(n), np.ones((n, 1))]),
            np.hstack([-np.eye(n), np.ones((n, 1))]),
            np.hstack([self.A, norms[:, None]]),
        ]
        rhs = np.concatenate([np.ones(n), np.zeros(n), np.ones(self.m)])
        obj = np.zeros(n + 1)
        obj[-1] = 1.0
        sol = simplex_max(obj, np.vstack(rows), rhs)
        return sol[:n], float(sol[n])

    def lmo(self, direction):
        d = _vec(direction, self.n)
        x = simplex_max(-d, self._lp_A, self._lp_b)
        return np.clip(x, 0.0, 1.0)

    def violation(self, x):
        x = _vec(x, self.n)
        worst = max(0.0, float(-x.min()), float(x.max() - 1.0))
        if self.m:
            worst = max(worst, float((self.A @ x).max() - 1.0))
        return worst

    def project(self, x):
        """Dykstra's alternating projections over the box and each halfspace."""
        x = _vec(x, self.n).copy()
        if self.violation(x) <= 0.0:
            return x
        if self.m == 0:
            return np.clip(x, 0.0, 1.0)
        incs = np.zeros((self.m + 1, self.n))
        for _ in range(self.dykstra_max_sweeps):
            prev = x.copy()
            z = x + incs[0]
            x = np.clip(z, 0.0, 1.0)
            incs[0] = z - x
            for i in range(self.m):
                a = self.A[i]
                z = x + incs[i + 1]
                excess = a @ z - 1.0
                x = z - (excess / self._row_norm2[i]) * a if excess > 0 else z
                incs[i + 1] = z - x
            if self.violation(x) <= self.dykstra_tol and np.abs(x - prev).max() <= self.dykstra_tol:
                return x
        raise ProjectionError(f"Dykstra did not reach tol {self.dykstra_tol} in {self.dykstra_max_sweeps} sweeps")


class ShiftedSimplex(ConstraintSet):
    """``{y : -1 <= y_i <= 2n - 1, sum(y) <= n}``, the image of the solid
    simplex ``{x >= 0, sum(x) <= 1}`` under ``y = 2n x - 1``."""

    def __init__(self, n):
        if n < 1:
            raise GeometryError("ShiftedSimplex needs n >= 1")
        self.n = int(n)
        self.center = np.zeros(self.n)
        self.r = 1.0
        self.R = math.sqrt((2 * n - 1) ** 2 + n - 1)
        self.D = 2.0 * math.sqrt(2.0) * n if n > 1 else 2.0

    def __repr__(self):
        return f"ShiftedSimplex(n={self.n})"

    def to_simplex(self, y):
        return (np.asarray(y, dtype=float) + 1.0) / (2.0 * self.n)

    def from_simplex(self, x):
        return 2.0 * self.n * np.asarray(x, dtype=float) - 1.0

    def lmo(self, direction):
        d = _vec(direction, self.n)
        y = np.full(self.n, -1.0)
        i = int(np.argmin(d))
        if d[i] < 0:
            y[i] = 2.0 * self.n - 1.0
        return y

    def violation(self, y):
        y = _vec(y, self.n)
        return max(
            0.0,
            float(-1.0 - y.min()),
            float(y.max() - (2.0 * self.n - 1.0)),
            float(y.sum() - self.n),
        )

    def project(self, y):
        x = np.maximum(self.to_simplex(_vec(y, self.n)), 0.0)
        if x.sum() > 1.0:
            x = project_simplex(self.to_simplex(y))
        return np.clip(self.from_simplex(x), -1.0, 2.0 * self.n - 1.0)

    def vertices(self, count, rng):
        idx = rng.integers(self.n + 1, size=count)
        out = np.full((count, self.n), -1.0)
        hit = idx < self.n
        out[np.flatnonzero(hit), idx[hit]] = 2.0 * self.n - 1.0
        return out


def project_simplex(v, z=1.0):
    """Euclidean projection onto ``{x >= 0, sum(x) = z}`` (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    ind = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


class NuclearNormBall(ConstraintSet):
    """``{X in R^(rows x cols) : ||X||_* <= k}``, points flattened row-major.

    ``||X||_* <= sqrt(min(rows, cols)) ||X||_F`` gives the inscribed radius
    ``k / sqrt(min(rows, cols))``; ``||X||_F <= ||X||_*`` gives ``R = k``.
    """

    def __init__(self, k, rows, cols=None, r=None, R=None, D=None):
        cols = rows if cols is None else cols
        if k <= 0 or rows < 1 or cols < 1:
            raise GeometryError("NuclearNormBall needs k > 0 and positive shape")
        self.k = float(k)
        self.shape = (int(rows), int(cols))
        self.n = self.shape[0] * self.shape[1]
        self.center = np.zeros(self.n)
        self.r = float(r) if r is not None else self.k / math.sqrt(min(self.shape))
        self.R = float(R) if R is not None else self.k
        self.D = float(D) if D is not None else 2.0 * self.k
        self.unconverged = 0
        _warm_kernel()

    def __repr__(self):
        return f"NuclearNormBall(k={self.k}, shape={self.shape})"

    def lmo(self, direction, start=None):
        """``-k u v^T`` for the top singular pair of the direction matrix.

        For a symmetric direction whose negation has a dominant positive
        eigenvalue this is ``k w w^T`` with ``w`` that top eigenvector.
        """
        return self.lmo_warm(direction, start)[0]

    def lmo_warm(self, direction, start=None):
        """``lmo`` plus the right singular vector found, to seed the next call."""
        d = _vec(direction, self.n).reshape(self.shape)
        u, s, v, ok = top_singular_pair(d, start=start)
        if not ok:
            self.unconverged += 1
        if s == 0.0:
            return np.zeros(self.n), None
        return np.multiply.outer(u * -self.k, v).ravel(), v

    def nuclear_norm(self, x):
        return float(np.linalg.svd(_vec(x, self.n).reshape(self.shape), compute_uv=False).sum())

    def violation(self, x):
        return max(0.0, self.nuclear_norm(x) - self.k)

    def project(self, x):
        X = _vec(x, self.n).reshape(self.shape)
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        if s.sum() <= self.k:
            return X.ravel().copy()
        s = project_simplex(s, self.k)
        return ((U * s) @ Vt).ravel()

    def vertices(self, count, rng):
        a = sample_unit_sphere(self.shape[0], rng, count)
        b = sample_unit_sphere(self.shape[1], rng, count)
        return self.k * np.einsum("si,sj->sij", a, b).reshape(count, self.n)

class ShrunkenSet(ConstraintSet):
    """``c + (1 - alpha)(K - c)`` for a base set K with center c."""

    def __init__(self, base, alpha):
        if not 0.0 <= alpha < 1.0:
            raise GeometryError("alpha must lie in [0, 1)")
        if isinstance(base, ShrunkenSet):
            alpha = 1.0 - (1.0 - base.alpha) * (1.0 - alpha)
            base = base.base
        self._base = base
        self._alpha = float(alpha)
        self.scale = 1.0 - self._alpha
        self.n = base.n
        self.center = base.center
        self.r = self.scale * base.r
        self.R = self.scale * base.R
        self.D = self.scale * base.D

    def __repr__(self):
        return f"ShrunkenSet({self._base!r}, alpha={self._alpha:g})"

    @property
    def base(self):
        return self._base

    @property
    def alpha(self):
        return self._alpha

    def _out(self, p):
        return self.center + self.scale * (p - self.center)

    def _in(self, x):
        return self.center + (x - self.center) / self.scale

    def lmo(self, direction, **kw):
        return self._out(self._base.lmo(direction, **kw))

    def lmo_warm(self, direction, start=None):
        p, v = self._base.lmo_warm(direction, start)
        return self._out(p), v

    def project(self, x):
        return self._out(self._base.project(self._in(_vec(x, self.n))))

    def violation(self, x):
        return self.scale * self._base.violation(self._in(_vec(x, self.n)))

    def vertices(self, count, rng):
        return self._out(self._base.vertices(count, rng))

    def sample_points(self, count, rng):
        return self._out(self._base.sample_points(count, rng))


def lmo(constraint, direction):
    """argmin of ``<direction, x>`` over the set."""
    return constraint.lmo(direction)


def project(constraint, x):
    return constraint.project(x)


def contains(constraint, x, tol=DEFAULT_TOL):
    return constraint.contains(x, tol)
