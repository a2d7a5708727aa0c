"""
Monte Carlo grid runner.

Every (scenario, replicate) pair is an independent task: generate the trial,
fit FULL (ANCOVA before withdrawal), MMRM and each MI model, then reduce the
per-replicate estimates to performance measures against the analytic truth.
Tasks may run in worker processes; the reduction is ordered by (scenario,
replicate) so results do not depend on scheduling.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .analyze import ESTIMANDS, ancova, ci_halfwidth, fit_mmrm, pool_triples, single_fit_interval
from .exceptions import ConfigurationError, EstimandsError
from .imputation import ImputationConfig, impute
from .modelspec import ModelName, builtin_spec
from .trialgen import DESK_SCENARIO_IDS, DgmParams, generate_trial, get_scenario, true_estimand

logger = logging.getLogger(__name__)

FULL = "FULL"
MMRM = "MMRM"
MI_MODELS = tuple(m.value for m in ModelName)
ALL_MODELS = (FULL, MMRM) + MI_MODELS
HIERARCHY = (ModelName.PICS.value, ModelName.PICS_R.value, ModelName.OICS_R.value, ModelName.CICS.value, MMRM)
STABLE_LIMIT_ML = 1e6

PROFILES = {
    "desk": {"n_sims": 250, "imputations": 25, "scenarios": DESK_SCENARIO_IDS},
    "full": {"n_sims": 1000, "imputations": 25, "scenarios": tuple(range(1, 73))},
}


@dataclass
class RunConfig:
    scenarios: tuple = DESK_SCENARIO_IDS
    n_sims: int = 1000
    models: tuple = ALL_MODELS
    imputations: int = 25
    seed: int = 20240101
    threads: int = 1
    out_dir: str = "results"
    timepoint: int = 3
    dgm: DgmParams = field(default_factory=DgmParams)
    retain_off_treatment: bool = True

    def __post_init__(self):
        unknown = [m for m in self.models if m not in ALL_MODELS]
        if unknown:
            raise ConfigurationError(f"unknown model(s): {', '.join(unknown)}")
        # FULL anchors the halfwidth comparison
        ordered = [m for m in ALL_MODELS if m in self.models or m == FULL]
        self.models = tuple(ordered)
        self.scenarios = tuple(int(s) for s in self.scenarios)
        if not self.scenarios:
            raise ConfigurationError("no scenarios selected")
        bad = [s for s in self.scenarios if not 1 <= s <= 72]
        if bad:
            raise ConfigurationError(f"scenario ids outside 1..72: {bad}")
        if self.n_sims < 1:
            raise ConfigurationError("n_sims must be at least 1")
        if self.imputations < 2:
            raise ConfigurationError("pooling needs at least 2 imputations")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        if self.timepoint not in (1, 2, 3):
            raise ConfigurationError("timepoint must be 1, 2 or 3")

    @classmethod
    def from_profile(cls, profile, defaults=None, **overrides):
        """defaults < profile < overrides; ``None`` overrides are ignored."""
        if profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {profile!r}")
        values = dict(defaults or {})
        values.update(PROFILES[profile])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def scenario_list(self):
        return [get_scenario(s, self.dgm, self.retain_off_treatment) for s in self.scenarios]


@dataclass
class ReplicateResult:
    scenario_id: int
    replicate: int
    model: str
    converged: bool
    estimates: dict = field(default_factory=dict)  # estimand -> PooledEstimate
    reason: str = ""


@dataclass
class MetricsRow:
    scenario_id: int
    model: str
    estimand: str
    n_sims: int
    conv_rate: float
    bias: float
    mcse_bias: float
    mean_halfwidth: float
    halfwidth_change_vs_full: float
    coverage: float
    mcse_coverage: float

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _is_stable(estimates):
    effect = estimates["effect"]
    return (
        all(np.isfinite(e.point) for e in estimates.values())
        and abs(effect.point) < STABLE_LIMIT_ML
        and all(e.total_var > 0 for e in estimates.values())
    )


def fit_model(model, dataset, cfg):
    """Pooled estimates for one model on one replicate; raises EstimandsError on failure."""
    j = cfg.timepoint
    if model == FULL:
        triple = ancova(dataset.full_outcomes(), dataset.arm, j)
        return {name: single_fit_interval(e) for name, e in triple.components().items()}
    if model == MMRM:
        triple = fit_mmrm(dataset.observed, dataset.arm).estimates(j)
        return {name: single_fit_interval(e) for name, e in triple.components().items()}

    spec = builtin_spec(model)
    icfg = ImputationConfig(m=cfg.imputations, seed=cfg.seed, fail_fast=True)
    completed = impute(dataset, spec, icfg, coords=(dataset.scenario.scenario_id, dataset.replicate_id, model))
    if not completed.all_ok():
        raise EstimandsError(str(completed.failures()[0]))
    triples = [ancova(copy, dataset.arm, j) for copy in completed.copies]
    return pool_triples(triples, dataset.n - 3)


def evaluate_replicate(scenario, replicate, cfg):
    dataset = generate_trial(scenario, replicate, cfg.seed)
    results = []
    for model in cfg.models:
        try:
            estimates = fit_model(model, dataset, cfg)
        except (EstimandsError, ValueError) as exc:
            # LinAlgError is a ValueError
            logger.debug("scenario %d replicate %d %s failed: %s", scenario.scenario_id, replicate, model, exc)
            results.append(ReplicateResult(scenario.scenario_id, replicate, model, False, reason=str(exc)))
            continue
        stable = _is_stable(estimates)
        results.append(ReplicateResult(
            scenario.scenario_id, replicate, model, stable,
            estimates=estimates if stable else {},
            reason="" if stable else "unstable estimates",
        ))
    return results


def _run_task(task):
    scenario, replicate, cfg = task
    return evaluate_replicate(scenario, replicate, cfg)


def simulate_replicates(cfg):
    """Per-replicate results for every scenario, ordered by (scenario, replicate, model)."""
    tasks = [(s, r, cfg) for s in cfg.scenario_list() for r in range(1, cfg.n_sims + 1)]
    logger.info("running %d scenario(s) x %d replicate(s) on %d worker(s)",
                len(cfg.scenarios), cfg.n_sims, cfg.threads)
    if cfg.threads == 1:
        batches = map(_run_task, tasks)
        return [r for batch in batches for r in batch]
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        chunk = max(1, len(tasks) // (cfg.threads * 8))
        return [r for batch in pool.map(_run_task, tasks, chunksize=chunk) for r in batch]


def coverage(ci_low, ci_high, truth):
    """Fraction of intervals containing ``truth`` and its Monte Carlo SE."""
    low = np.asarray(ci_low, dtype=float)
    high = np.asarray(ci_high, dtype=float)
    if low.size < 1:
        raise ValueError("coverage needs at least one interval")
    p = float(np.mean((low <= truth) & (truth <= high)))
    return p, math.sqrt(p * (1.0 - p) / low.size)


def _summarise(estimates, truth):
    points = np.array([e.point for e in estimates])
    halfwidths = np.array([ci_halfwidth(e) for e in estimates])
    n = points.size
    cov, mcse_cov = coverage([e.ci_low for e in estimates], [e.ci_high for e in estimates], truth)
    return {
        "bias": float(points.mean() - truth),
        "mcse_bias": float(points.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
        "mean_halfwidth": float(halfwidths.mean()),
        "coverage": cov,
        "mcse_coverage": mcse_cov,
    }


def aggregate(results, cfg):
    """Reduce per-replicate results to one MetricsRow per (scenario, model, estimand)."""
    by_cell = {}
    for r in results:
        by_cell.setdefault((r.scenario_id, r.model), []).append(r)

    rows = []
    nan = float("nan")
    for scenario in cfg.scenario_list():
        truth = dict(zip(("mean_control", "mean_active", "effect"), true_estimand(scenario, cfg.timepoint)))
        full_halfwidth = {}
        for model in cfg.models:
            reps = sorted(by_cell.get((scenario.scenario_id, model), []), key=lambda r: r.replicate)
            converged = [r for r in reps if r.converged]
            conv_rate = len(converged) / len(reps) if reps else 0.0
            for estimand in ESTIMANDS:
                if converged:
                    summary = _summarise([r.estimates[estimand] for r in converged], truth[estimand])
                else:
                    summary = dict(bias=nan, mcse_bias=nan, mean_halfwidth=nan, coverage=nan, mcse_coverage=nan)
                if model == FULL:
                    full_halfwidth[estimand] = summary["mean_halfwidth"]
                reference = full_halfwidth.get(estimand, nan)
                change = 100.0 * (summary["mean_halfwidth"] / reference - 1.0) if reference else nan
                rows.append(MetricsRow(
                    scenario_id=scenario.scenario_id,
                    model=model,
                    estimand=estimand,
                    n_sims=len(reps),
                    conv_rate=conv_rate,
                    halfwidth_change_vs_full=0.0 if model == FULL else change,
                    **summary,
                ))
            logger.info("scenario %d %s: conv_rate %.3f", scenario.scenario_id, model, conv_rate)
    return rows


def run_grid(cfg):
    """Simulate and score the configured grid; see ``simulate_replicates`` and ``aggregate``."""
    return aggregate(simulate_replicates(cfg), cfg)


def select_by_hierarchy(results, order=HIERARCHY):
    """First converged model of one replicate in the pre-specified fallback order, else None."""
    converged = {r.model: r for r in results if r.converged}
    for model in order:
        if model in converged:
            return converged[model]
    return None
