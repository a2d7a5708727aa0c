"""
Estimators for the treatment-policy estimand and Rubin's-rules pooling.

All estimates are reported in mL (outcomes are held in litres).
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .exceptions import (
    IncompleteData,
    InsufficientData,
    NonConvergence,
    SingularCovariance,
    TooFewCopies,
)
from .statcore import maximize, ols_fit

logger = logging.getLogger(__name__)

ML_PER_LITRE = 1000.0
ESTIMANDS = ("effect", "mean_control", "mean_active")
N_FIXED = 9  # intercept, treatment and baseline at each of the 3 timepoints
CHOLESKY_FLOOR = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ComponentEstimate:
    point: float
    variance: float
    df: float


@dataclass
class EstimateTriple:
    mean_control: ComponentEstimate
    mean_active: ComponentEstimate
    effect: ComponentEstimate

    def components(self):
        return {name: getattr(self, name) for name in ESTIMANDS}


def _change_estimates(beta, cov, baseline_mean, df):
    """LS means of change at the pooled baseline mean from (intercept, treatment, baseline) coefficients."""
    contrasts = {
        "mean_control": np.array([1.0, 0.0, baseline_mean]),
        "mean_active": np.array([1.0, 1.0, baseline_mean]),
        "effect": np.array([0.0, 1.0, 0.0]),
    }
    out = {}
    for name, c in contrasts.items():
        out[name] = ComponentEstimate(
            point=float(c @ beta) * ML_PER_LITRE,
            variance=float(c @ cov @ c) * ML_PER_LITRE ** 2,
            df=float(df),
        )
    return EstimateTriple(**out)


def ancova(outcomes, arm, timepoint=3):
    """
    ANCOVA of change from baseline at ``timepoint`` on treatment and baseline.

    ``outcomes`` is an ``(n, 4)`` array of Y0..Y3; ``arm`` is 0 (control) / 1 (active).
    """
    outcomes = np.asarray(outcomes, dtype=float)
    arm = np.asarray(arm, dtype=float)
    y0, yj = outcomes[:, 0], outcomes[:, timepoint]
    if np.isnan(y0).any() or np.isnan(yj).any():
        raise IncompleteData(f"ANCOVA needs complete Y0 and Y{timepoint}")
    design = np.column_stack([np.ones_like(y0), arm, y0])
    fit = ols_fit(design, yj - y0)
    if fit.aliased[1]:
        raise InsufficientData("treatment indicator is not estimable")
    cov = fit.residual_variance * fit.xtx_inverse
    return _change_estimates(fit.coefficients, cov, float(y0.mean()), fit.n_used - 3)


@dataclass
class MmrmData:
    """Sufficient statistics of the change-score MMRM, one entry per dropout pattern."""
    patterns: list  # (k, n_k, XtX (3x3), C (3xk), S (kxk))
    n_subjects: int
    n_obs: int
    baseline_mean: float


def mmrm_data(observed, arm):
    observed = np.asarray(observed, dtype=float)
    arm = np.asarray(arm, dtype=float)
    if np.isnan(observed[:, 0]).any():
        raise IncompleteData("baseline must be observed for every subject")
    present = ~np.isnan(observed[:, 1:])
    n_observed = present.sum(axis=1)
    # monotone: the observed post-baseline visits are a prefix
    prefix = np.arange(3)[None, :] < n_observed[:, None]
    if np.any(present != prefix):
        raise IncompleteData("missing outcomes are not monotone")

    used = n_observed > 0
    y0 = observed[:, 0]
    baseline_mean = float(y0[used].mean()) if used.any() else float("nan")
    patterns = []
    for k in (1, 2, 3):
        rows = n_observed == k
        if not rows.any():
            continue
        x = np.column_stack([np.ones(rows.sum()), arm[rows], y0[rows]])
        y = observed[rows, 1:k + 1] - y0[rows, None]
        patterns.append((k, int(rows.sum()), x.T @ x, x.T @ y, y.T @ y))
    return MmrmData(
        patterns=patterns,
        n_subjects=int(used.sum()),
        n_obs=int(n_observed.sum()),
        baseline_mean=baseline_mean,
    )


def cholesky_from_theta(theta):
    factor = np.zeros((3, 3))
    factor[np.tril_indices(3)] = theta
    return factor


def _gls(theta, data):
    factor = cholesky_from_theta(theta)
    a = np.zeros((N_FIXED, N_FIXED))
    b = np.zeros(N_FIXED)
    trace_ws = 0.0
    logdet_v = 0.0
    for k, n_k, xtx, c, s in data.patterns:
        lk = factor[:k, :k]
        diag = np.abs(np.diag(lk))
        if np.any(diag == 0.0):
            return None
        w = linalg.cho_solve((lk, True), np.eye(k))
        logdet_v += n_k * 2.0 * float(np.sum(np.log(diag)))
        padded = np.zeros((3, 3))
        padded[:k, :k] = w
        a += np.kron(padded, xtx)
        wc = np.zeros((3, 3))
        wc[:k, :] = w @ c.T
        b += wc.ravel()
        trace_ws += float(np.sum(w * s))
    return a, b, trace_ws, logdet_v


def reml_loglik(theta, data):
    """Restricted log-likelihood at Cholesky parameters ``theta`` (row-major lower triangle)."""
    parts = _gls(np.asarray(theta, dtype=float), data)
    if parts is None:
        return -np.inf
    a, b, trace_ws, logdet_v = parts
    try:
        a_factor = linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    beta = linalg.cho_solve(a_factor, b)
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(a_factor[0]))))
    quad = trace_ws - float(beta @ b)
    return -0.5 * (logdet_v + logdet_a + quad + (data.n_obs - N_FIXED) * LOG_2PI)


@dataclass
class MmrmFit:
    beta: np.ndarray  # index 3 * (timepoint - 1) + (0 intercept, 1 treatment, 2 baseline)
    cov_beta: np.ndarray
    covariance: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    n_subjects: int
    baseline_mean: float
    theta: np.ndarray = field(default=None)

    @property
    def df(self):
        return self.n_subjects - N_FIXED

    def estimates(self, timepoint=3):
        block = slice(3 * (timepoint - 1), 3 * timepoint)
        return _change_estimates(
            self.beta[block], self.cov_beta[block, block], self.baseline_mean, self.df
        )


def _start_theta(observed, arm):
    y0 = observed[:, 0]
    sds = []
    for t in (1, 2, 3):
        rows = ~np.isnan(observed[:, t])
        if rows.sum() > 3:
            x = np.column_stack([np.ones(rows.sum()), arm[rows], y0[rows]])
            fit = ols_fit(x, observed[rows, t] - y0[rows])
            sds.append(np.sqrt(max(fit.residual_variance, 1e-4)))
        else:
            sds.append(sds[-1] if sds else 1.0)
    start = np.zeros((3, 3))
    start[np.diag_indices(3)] = sds
    return start[np.tril_indices(3)]


DIAGONAL = [0, 2, 5]


def _theta_from_eta(eta):
    # log scale on the diagonal keeps the factor away from singularity
    theta = np.array(eta, dtype=float, copy=True)
    theta[DIAGONAL] = np.exp(theta[DIAGONAL])
    return theta


def fit_mmrm(observed, arm, max_iter=500):
    """Fit the MMRM by REML; raises NonConvergence or SingularCovariance."""
    observed = np.asarray(observed, dtype=float)
    arm = np.asarray(arm, dtype=float)
    data = mmrm_data(observed, arm)
    if data.n_subjects <= N_FIXED:
        raise InsufficientData(f"{data.n_subjects} subjects with post-baseline data")

    start = _start_theta(observed, arm)
    start[DIAGONAL] = np.log(start[DIAGONAL])
    result = maximize(
        lambda eta: reml_loglik(_theta_from_eta(eta), data),
        start,
        max_iter=max_iter,
    )
    if not result.converged:
        raise NonConvergence(f"REML optimizer stopped: {result.message}")
    theta = _theta_from_eta(result.argmax)
    if np.any(theta[DIAGONAL] <= CHOLESKY_FLOOR):
        raise SingularCovariance("a Cholesky diagonal collapsed towards zero")

    a, b, _, _ = _gls(theta, data)
    cov_beta = linalg.inv(a)
    cov_beta = (cov_beta + cov_beta.T) / 2.0
    factor = cholesky_from_theta(theta)
    logger.debug("MMRM converged in %d iterations, loglik %.6f", result.iterations, result.value)
    return MmrmFit(
        beta=linalg.solve(a, b, assume_a="pos"),
        cov_beta=cov_beta,
        covariance=factor @ factor.T,
        loglik=result.value,
        converged=True,
        iterations=result.iterations,
        n_subjects=data.n_subjects,
        baseline_mean=data.baseline_mean,
        theta=theta,
    )


def mmrm(observed, arm, timepoint=3):
    return fit_mmrm(observed, arm).estimates(timepoint)


@dataclass
class PooledEstimate:
    point: float
    within_var: float
    between_var: float
    total_var: float
    df: float
    ci_low: float
    ci_high: float
    m: int = 1
    degenerate: bool = False

    @property
    def halfwidth(self):
        return ci_halfwidth(self)


def t_quantile(df, level=0.95):
    q = 0.5 + level / 2.0
    if not np.isfinite(df):
        return float(stats.norm.ppf(q))
    return float(stats.t.ppf(q, df))


def _interval(point, total_var, df):
    half = t_quantile(df) * np.sqrt(total_var)
    return point - half, point + half


def barnard_rubin_df(m, within_var, between_var, complete_data_df):
    total = within_var + (1.0 + 1.0 / m) * between_var
    if total <= 0.0:
        return float(complete_data_df)
    lam = (1.0 + 1.0 / m) * between_var / total
    nu_com = float(complete_data_df)
    nu_obs = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * (1.0 - lam)
    if lam == 0.0:
        return nu_obs
    nu_old = (m - 1) / lam ** 2
    return nu_old * nu_obs / (nu_old + nu_obs)


def rubin_pool(points, variances, complete_data_df):
    """Combine per-copy (point, variance) pairs with Rubin's rules and Barnard-Rubin df."""
    points = np.asarray(points, dtype=float)
    variances = np.asarray(variances, dtype=float)
    m = points.size
    if m < 2:
        raise TooFewCopies(f"pooling needs at least 2 copies, got {m}")
    point = float(points.mean())
    within = float(variances.mean())
    between = float(points.var(ddof=1))
    total = within + (1.0 + 1.0 / m) * between
    df = barnard_rubin_df(m, within, between, complete_data_df)
    low, high = _interval(point, total, df)
    return PooledEstimate(
        point=point, within_var=within, between_var=between, total_var=total,
        df=df, ci_low=low, ci_high=high, m=m, degenerate=total <= 0.0,
    )


def single_fit_interval(estimate):
    """A non-imputed estimate expressed as a PooledEstimate (m = 1, no between-copy variance)."""
    low, high = _interval(estimate.point, estimate.variance, estimate.df)
    return PooledEstimate(
        point=estimate.point, within_var=estimate.variance, between_var=0.0,
        total_var=estimate.variance, df=estimate.df, ci_low=low, ci_high=high,
        m=1, degenerate=estimate.variance <= 0.0,
    )


def pool_triples(triples, complete_data_df):
    """Pool each estimand component across copies."""
    return {
        name: rubin_pool(
            [getattr(t, name).point for t in triples],
            [getattr(t, name).variance for t in triples],
            complete_data_df,
        )
        for name in ESTIMANDS
    }


def ci_halfwidth(pooled):
    return (pooled.ci_high - pooled.ci_low) / 2.0
