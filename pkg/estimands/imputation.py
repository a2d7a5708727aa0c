"""
Sequential regression imputation for monotone missing outcomes.

For each copy, each by-group and each timepoint in turn the step model is
fitted on the rows with an observed outcome, a parameter vector is drawn from
its posterior and the missing outcomes are drawn from the predictive
distribution. Residual-mode models additionally keep residual columns
``R_j = Y_j - (intercept part of the drawn step model)``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import (
    ConfigurationError,
    DegenerateVariance,
    EmptyDesign,
    InsufficientData,
    NotPositiveDefinite,
    StepFailure,
)
from .modelspec import (
    FINAL_PATTERNS,
    Class,
    Continuous,
    Design,
    Interaction,
    build_design,
    derive_vars,
    estimability_check,
)
from .statcore import RngStream, bayes_regression_draw, ols_fit
from .trialgen import Arm, N_POST

logger = logging.getLogger(__name__)


@dataclass
class ImputationConfig:
    m: int = 25
    seed: int = 0
    min_resid_df: int = 1
    sigma_floor: float = 1e-10
    fail_fast: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ConfigurationError("m must be at least 1")
        if self.min_resid_df < 1:
            raise ConfigurationError("min_resid_df must be at least 1")
        if self.sigma_floor < 0:
            raise ConfigurationError("sigma_floor must be non-negative")


@dataclass
class CopyStatus:
    ok: bool = True
    group: str = ""
    step: int = None
    reason: str = ""

    def __str__(self):
        if self.ok:
            return "ok"
        where = f" at {self.group} step Y{self.step}" if self.step is not None else ""
        return f"failed{where}: {self.reason}"


@dataclass
class StepDiagnostics:
    copy: int
    group: str
    step: int
    n_fit: int
    n_imputed: int
    rank: int
    resid_df: int
    aliased: tuple = ()
    coefficients: dict = field(default_factory=dict)
    sigma: float = float("nan")


@dataclass
class CompletedData:
    dataset: object
    model: str
    copies: list
    status: list
    residuals: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def m(self):
        return len(self.copies)

    def all_ok(self):
        return bool(self.status) and all(s.ok for s in self.status)

    def ok_copies(self):
        return [c for c, s in zip(self.copies, self.status) if s.ok]

    def failures(self):
        return [s for s in self.status if not s.ok]

    def drawn_params(self, copy, group):
        """``{step: {label: coefficient}}`` drawn for one copy and by-group."""
        return {
            d.step: dict(d.coefficients)
            for d in self.diagnostics
            if d.copy == copy and d.group == group
        }

    def copy_frame(self, copy):
        frame = self.dataset.to_frame(outcomes=self.copies[copy])
        frame.insert(0, "copy", copy + 1)
        return frame

    def to_csv(self, path_or_buffer):
        """Every copy stacked, in the dataset export schema plus a ``copy`` column."""
        frame = pd.concat([self.copy_frame(c) for c in range(self.m)], ignore_index=True)
        frame.to_csv(path_or_buffer, index=False, na_rep="")


def group_keys(dataset, spec, derived):
    """By-group label per subject: ``Control`` or ``Active/OXX`` style."""
    arms = np.array([Arm(int(a)).label for a in dataset.arm], dtype=object)
    if "FinalPattern" in spec.by_groups:
        return np.array([f"{a}/{p}" for a, p in zip(arms, derived.final_pattern)], dtype=object)
    return arms


def update_residuals(outcome, design, coefficients):
    """Outcome minus the intercept part (intercept plus own class level) of a drawn model."""
    cols = design.intercept_columns
    return np.asarray(outcome, dtype=float) - design.matrix[:, cols] @ np.asarray(coefficients)[cols]


def _draw_step(design, y_fit, rng, cfg, fit_mask):
    fit = ols_fit(design.matrix[fit_mask], y_fit)
    coefficients, sigma = bayes_regression_draw(fit, rng, variance_floor=cfg.sigma_floor ** 2)
    if not sigma > cfg.sigma_floor:
        raise DegenerateVariance(f"drawn sigma {sigma:.3e}")
    return fit, coefficients, sigma


def _impute_copy(c, values, derived, groups, spec, cfg, coords, residuals, diagnostics):
    columns = derived.columns()
    for group in sorted(set(groups.tolist())):
        idx = np.flatnonzero(groups == group)

        if spec.residual_mode:
            rng = RngStream.derive(cfg.seed, *coords, "copy", c, group, 0)
            baseline = Design(matrix=np.ones((idx.size, 1)), labels=["Intercept"], intercept_columns=[0])
            try:
                fit, coefficients, sigma = _draw_step(baseline, values[idx, 0], rng, cfg, slice(None))
            except (InsufficientData, DegenerateVariance) as exc:
                raise StepFailure(c, group, 0, str(exc)) from exc
            residuals[idx, 0] = update_residuals(values[idx, 0], baseline, coefficients)
            diagnostics.append(StepDiagnostics(
                c, group, 0, idx.size, 0, fit.rank, fit.df,
                coefficients={"Intercept": float(coefficients[0])}, sigma=sigma,
            ))

        for j in range(1, N_POST + 1):
            missing = np.isnan(values[idx, j])
            if not missing.any() and not spec.residual_mode:
                continue
            formula = spec.formula(j)
            rows = {f"Y{k}": values[idx, k] for k in range(j)}
            if spec.residual_mode:
                rows.update({f"R{k}": residuals[idx, k] for k in range(j)})
            rows.update({name: col[idx] for name, col in columns.items()})
            try:
                design = build_design(formula, rows)
            except EmptyDesign as exc:
                raise StepFailure(c, group, j, str(exc)) from exc

            fit_mask = ~missing
            report = estimability_check(
                design.matrix[fit_mask], cfg.min_resid_df, labels=design.labels,
                impute_design=design.matrix[missing], allow_aliased=True,
            )
            if not report.ok:
                raise StepFailure(c, group, j, report.describe())
            rng = RngStream.derive(cfg.seed, *coords, "copy", c, group, j)
            try:
                fit, coefficients, sigma = _draw_step(design, values[idx[fit_mask], j], rng, cfg, fit_mask)
            except (InsufficientData, DegenerateVariance, NotPositiveDefinite) as exc:
                raise StepFailure(c, group, j, str(exc)) from exc

            if missing.any():
                target = idx[missing]
                noise = rng.normal(target.size)
                values[target, j] = design.matrix[missing] @ coefficients + sigma * noise
            if spec.residual_mode:
                residuals[idx, j] = update_residuals(values[idx, j], design, coefficients)

            aliased = tuple(label for label, a in zip(design.labels, fit.aliased) if a)
            diagnostics.append(StepDiagnostics(
                c, group, j, int(fit_mask.sum()), int(missing.sum()), fit.rank, fit.df,
                aliased=aliased,
                coefficients={label: float(b) for label, b in zip(design.labels, coefficients)},
                sigma=sigma,
            ))
            logger.debug("copy %d %s Y%d: n_fit=%d imputed=%d rank=%d df=%d",
                         c, group, j, fit_mask.sum(), missing.sum(), fit.rank, fit.df)


def impute(dataset, spec, cfg=None, coords=()):
    """
    Multiply impute a monotone dataset.

    ``coords`` (scenario, replicate, model, ...) are hashed into every step's
    random stream together with the copy, by-group and step. A failing step
    marks its copy failed; with ``cfg.fail_fast`` the remaining copies are not
    attempted.
    """
    cfg = cfg or ImputationConfig()
    observed = dataset.observed
    derived = derive_vars(dataset.disc_time)
    groups = group_keys(dataset, spec, derived)

    copies, status, residual_sets, diagnostics = [], [], [], []
    for c in range(cfg.m):
        values = observed.copy()
        residuals = np.full(observed.shape, np.nan) if spec.residual_mode else None
        try:
            _impute_copy(c, values, derived, groups, spec, cfg, coords, residuals, diagnostics)
            copy_status = CopyStatus()
        except StepFailure as exc:
            logger.warning("%s: %s", spec.name, exc)
            copy_status = CopyStatus(ok=False, group=exc.group, step=exc.step, reason=exc.reason)
        copies.append(values)
        status.append(copy_status)
        residual_sets.append(residuals)
        if not copy_status.ok and cfg.fail_fast:
            for _ in range(c + 1, cfg.m):
                copies.append(observed.copy())
                status.append(CopyStatus(ok=False, reason="not run after an earlier copy failed"))
                residual_sets.append(None)
            break

    return CompletedData(
        dataset=dataset,
        model=spec.name,
        copies=copies,
        status=status,
        residuals=residual_sets,
        diagnostics=diagnostics,
    )


def _class_level(name, pattern):
    j = int(name[1:])
    history = pattern[:j]
    if name.startswith("D"):
        return history[-1]
    return history


def _intercept_part(formula, coefficients, pattern):
    total = coefficients.get("Intercept", 0.0)
    for term in formula.terms:
        if isinstance(term, Class):
            level = _class_level(term.name, pattern)
            total += coefficients.get(f"{term.name}[{level}]", 0.0)
    return total


def predict_pattern_means(spec, params, baseline_mean):
    """
    Expected outcome per final discontinuation pattern implied by a set of
    step parameters.

    ``params[j]`` maps design labels (``Intercept``, ``Y1``, ``D3[X]``,
    ``P2[OX]``, ``D1[X]:Y1`` ...) to coefficients; missing labels count as 0.
    Residual-mode specs may give the baseline mean draw as
    ``params[0]["Intercept"]``. Specs grouped by final pattern take
    ``params[pattern][j]``. Returns ``{pattern: array([E Y0, .., E Y3])}``.
    """
    by_pattern = "FinalPattern" in spec.by_groups
    means = {}
    for pattern in FINAL_PATTERNS:
        group_params = params[pattern] if by_pattern else params
        expected = {"Y0": float(baseline_mean)}
        if spec.residual_mode:
            mu0 = group_params.get(0, {}).get("Intercept", baseline_mean)
            expected["R0"] = float(baseline_mean) - mu0
        for j in range(1, N_POST + 1):
            formula = spec.formula(j)
            coefficients = group_params.get(j, {})
            value = _intercept_part(formula, coefficients, pattern)
            for term in formula.terms:
                if isinstance(term, Continuous):
                    value += coefficients.get(term.name, 0.0) * expected[term.name]
                elif isinstance(term, Interaction):
                    level = _class_level(term.class_name, pattern)
                    label = f"{term.class_name}[{level}]:{term.cont_name}"
                    value += coefficients.get(label, 0.0) * expected[term.cont_name]
            expected[f"Y{j}"] = value
            if spec.residual_mode:
                expected[f"R{j}"] = value - _intercept_part(formula, coefficients, pattern)
        means[pattern] = np.array([expected[f"Y{j}"] for j in range(N_POST + 1)])
    return means
