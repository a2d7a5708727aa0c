"""
Numeric kernels shared by the generator, the imputation engine and the
estimators.

Everything here is a pure function of its inputs and an ``RngStream``:
reproducible random streams, Cholesky factors, multivariate normal draws,
rank-revealing least squares, posterior parameter draws for the normal
linear model and a bounded quasi-Newton maximizer.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg, optimize

from .exceptions import (
    DegenerateVariance,
    InsufficientData,
    NonFiniteObjective,
    NotPositiveDefinite,
)

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
SYMMETRY_TOL = 1e-12
PIVOT_TOL = 1e-12
RANK_TOL = 1e-10
VARIANCE_FLOOR = 1e-12
REJECT_PENALTY = 1e6  # relative score of a non-finite trial point
CHI2_SUM_OF_SQUARES_MAX_DF = 100


def stream_id(*coords):
    """Hash replicate/model/copy/step coordinates into an unsigned 64-bit id."""
    key = "/".join(str(c) for c in coords).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """
    A named random stream.

    The draw sequence depends only on ``(seed, stream_id)``; the underlying
    generator is PCG64 keyed through a ``SeedSequence``, so it is the same on
    every platform and independent of how work is scheduled.
    """
    seed: int
    stream_id: int = 0

    @classmethod
    def derive(cls, seed, *coords):
        return cls(seed=int(seed) & MASK64, stream_id=stream_id(*coords))

    def spawn(self, *coords):
        return RngStream(self.seed, stream_id(self.stream_id, *coords))

    @cached_property
    def generator(self):
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def chisquare(self, df):
        # Sum of squared normals is exact at the small df that sparse pattern models produce.
        if float(df).is_integer() and df <= CHI2_SUM_OF_SQUARES_MAX_DF:
            z = self.generator.standard_normal(int(df))
            return float(z @ z)
        return 2.0 * float(self.generator.standard_gamma(df / 2.0))


def _as_square(m):
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return a


def cholesky(m):
    """Lower-triangular ``L`` with ``L @ L.T == m``."""
    a = _as_square(m)
    if a.size == 0:
        return a.copy()
    max_diag = float(np.max(np.diag(a)))
    if max_diag <= 0.0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    pivots = np.diag(factor) ** 2
    if np.any(pivots <= PIVOT_TOL * max_diag):
        raise NotPositiveDefinite(
            f"pivot {float(np.min(pivots)):.3e} below {PIVOT_TOL:g} x max diagonal"
        )
    return factor


def mvn_sample(mean, cov, rng, size=None):
    """Draw ``mean + L z``; one vector when ``size`` is None, else ``size`` rows."""
    mean = np.asarray(mean, dtype=float)
    factor = cholesky(cov)
    if factor.shape[0] != mean.size:
        raise ValueError("mean and covariance dimensions differ")
    shape = (mean.size,) if size is None else (int(size), mean.size)
    z = rng.normal(shape)
    return mean + z @ factor.T


@dataclass
class LsFit:
    coefficients: np.ndarray
    residual_variance: float
    xtx_inverse: np.ndarray
    rank: int
    n_used: int
    aliased: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.aliased is None:
            self.aliased = np.zeros(self.coefficients.size, dtype=bool)

    @property
    def df(self):
        return self.n_used - self.rank

    @property
    def degenerate(self):
        return self.residual_variance <= VARIANCE_FLOOR

    def predict(self, design):
        return np.asarray(design, dtype=float) @ self.coefficients


def ols_fit(design, response):
    """
    Least squares through a column-pivoted QR.

    Columns whose pivot falls below ``1e-10`` x the largest column norm are
    aliased: their coefficient is pinned to zero and they are excluded from
    ``xtx_inverse``.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"design {x.shape} does not match response {y.shape}")
    n, p = x.shape
    if n == 0 or p == 0:
        raise InsufficientData(f"cannot fit {p} columns on {n} rows")

    q, r, piv = linalg.qr(x, mode="economic", pivoting=True)
    tol = RANK_TOL * float(np.max(np.linalg.norm(x, axis=0)))
    rank = int(np.sum(np.abs(np.diag(r)) > tol))
    if n <= rank:
        raise InsufficientData(f"{n} rows leave no residual df for rank {rank}")

    keep = piv[:rank]
    coefficients = np.zeros(p)
    xtx_inverse = np.zeros((p, p))
    if rank:
        r11 = r[:rank, :rank]
        coefficients[keep] = linalg.solve_triangular(r11, q[:, :rank].T @ y)
        r11_inv = linalg.solve_triangular(r11, np.eye(rank))
        xtx_inverse[np.ix_(keep, keep)] = r11_inv @ r11_inv.T
    resid = y - x @ coefficients
    aliased = np.ones(p, dtype=bool)
    aliased[keep] = False
    if aliased.any():
        logger.debug("ols_fit: %d aliased column(s) pinned to zero", int(aliased.sum()))
    return LsFit(
        coefficients=coefficients,
        residual_variance=float(resid @ resid) / (n - rank),
        xtx_inverse=xtx_inverse,
        rank=rank,
        n_used=n,
        aliased=aliased,
    )


def bayes_regression_draw(fit, rng, variance_floor=VARIANCE_FLOOR):
    """
    One draw of ``(beta, sigma)`` from the normal / inverse-chi-square
    posterior of a linear model under the reference prior.
    """
    nu = fit.n_used - fit.rank
    if nu < 1:
        raise InsufficientData(f"residual df {nu} < 1")
    if fit.residual_variance <= variance_floor:
        raise DegenerateVariance(f"residual variance {fit.residual_variance:.3e}")

    g = rng.chisquare(nu)
    sigma = float(np.sqrt(fit.residual_variance * nu / g))
    coefficients = fit.coefficients.copy()
    keep = ~fit.aliased
    if keep.any():
        factor = cholesky(fit.xtx_inverse[np.ix_(keep, keep)])
        coefficients[keep] += sigma * (factor @ rng.normal(int(keep.sum())))
    return coefficients, sigma


@dataclass
class MaximizeResult:
    argmax: np.ndarray
    value: float
    converged: bool
    iterations: int = 0
    gradient_norm: float = float("nan")
    message: str = ""


def _bound_arrays(bounds, n):
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    if bounds is not None:
        for i, (a, b) in enumerate(bounds):
            if a is not None:
                lo[i] = a
            if b is not None:
                hi[i] = b
    return lo, hi


def _finite_difference_gradient(objective, x, value, lo, hi):
    grad = np.zeros_like(x)
    for i in range(x.size):
        h = 6e-6 * max(1.0, abs(x[i]))
        up, down = x.copy(), x.copy()
        up[i] = min(x[i] + h, hi[i])
        down[i] = max(x[i] - h, lo[i])
        f_up = value if up[i] == x[i] else objective(up)
        f_down = value if down[i] == x[i] else objective(down)
        grad[i] = (f_up - f_down) / (up[i] - down[i])
    return grad


def _projected(grad, x, lo, hi):
    # ascent direction blocked by an active bound does not count
    g = grad.copy()
    g[(x <= lo) & (g < 0)] = 0.0
    g[(x >= hi) & (g > 0)] = 0.0
    return g


def maximize(objective, start, bounds=None, gradient=None, max_iter=500, restarts=3):
    """
    Maximize a smooth function with L-BFGS-B (box bounds optional).

    Convergence means the projected gradient norm (central differences unless
    ``gradient`` is given) is below ``1e-6 * (1 + |value|)``. A trial point
    where the objective is not finite is scored far below the best value seen,
    so the line search backtracks instead of stopping.
    """
    x = np.asarray(start, dtype=float).copy()
    value = float(objective(x))
    if not np.isfinite(value):
        raise NonFiniteObjective("objective is not finite at the start point")
    lo, hi = _bound_arrays(bounds, x.size)
    best = {"x": x.copy(), "value": value}
    rejected = []

    def negated(point):
        v = float(objective(point))
        if not np.isfinite(v):
            rejected.append(np.array(point, copy=True))
            return -best["value"] + REJECT_PENALTY * (1.0 + abs(best["value"]))
        if v > best["value"]:
            best["x"], best["value"] = np.array(point, copy=True), v
        return -v

    jac = "3-point" if gradient is None else (lambda point: -np.asarray(gradient(point), dtype=float))
    scipy_bounds = None if bounds is None else list(zip(lo, hi))
    iterations = 0
    message = ""
    gnorm = float("nan")
    for _ in range(restarts):
        res = optimize.minimize(
            negated, x, jac=jac, method="L-BFGS-B", bounds=scipy_bounds,
            options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-10, "maxls": 50},
        )
        iterations += int(res.nit)
        x, value = best["x"].copy(), best["value"]
        message = str(res.message)
        grad = gradient(x) if gradient is not None else _finite_difference_gradient(objective, x, value, lo, hi)
        gnorm = float(np.linalg.norm(_projected(np.asarray(grad, dtype=float), x, lo, hi)))
        if gnorm <= 1e-6 * (1.0 + abs(value)):
            return MaximizeResult(x, value, True, iterations, gnorm, message)
        if iterations >= max_iter:
            message = "MaxIterations"
            break
    if rejected:
        logger.debug("maximize: %d trial point(s) with a non-finite objective", len(rejected))
        message = f"{message}; objective not finite at {np.array2string(rejected[-1])}"
    return MaximizeResult(x, value, False, iterations, gnorm, message)

