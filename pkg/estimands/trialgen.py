"""
Simulated two-arm trials with treatment discontinuation and study withdrawal.

A replicate is built in three stages: potential on- and off-treatment
outcomes for every subject, propensity-ranked discontinuation that selects
exact counts per timepoint, then MCAR withdrawal of some discontinuers.
Outcomes are generated in litres; estimand values are reported in mL.
"""
import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import logit

from .exceptions import ConfigurationError, InfeasibleCounts, NotPositiveDefinite
from .statcore import RngStream, cholesky, mvn_sample

logger = logging.getLogger(__name__)

N_POST = 3
DISC_SPLIT = np.array([0.5, 0.3, 0.2])
ML_PER_LITRE = 1000.0


class Arm(enum.IntEnum):
    CONTROL = 0
    ACTIVE = 1

    @property
    def label(self):
        return self.name.capitalize()


class Mechanism(str, enum.Enum):
    DAR = "DAR"
    DNAR1 = "DNAR1"
    DNAR2 = "DNAR2"


class Balance(str, enum.Enum):
    BALANCED = "Balanced"
    MORE_EARLY = "MoreEarly"
    MORE_LATE = "MoreLate"


class Trajectory(str, enum.Enum):
    RETURN_TO_BASELINE = "RTB"
    SAME_AS_ACTIVE = "SAA"


RATE_PAIRS = ((0.1, 0.1), (0.1, 0.2), (0.2, 0.2), (0.5, 0.5))

WITHDRAWAL_PROBS = {
    Balance.BALANCED: (0.5, 0.5, 0.5),
    Balance.MORE_EARLY: (0.8, 0.2, 0.2),
    Balance.MORE_LATE: (0.2, 0.8, 0.8),
}

# RTB 1..36, SAA 37..72
DESK_SCENARIO_IDS = (1, 8, 11, 18, 24, 30, 41, 47, 54, 65, 66, 71)


def _default_sigma():
    return np.array([
        [0.45, 0.46, 0.46, 0.47],
        [0.46, 0.66, 0.62, 0.63],
        [0.46, 0.62, 0.65, 0.63],
        [0.47, 0.63, 0.63, 0.68],
    ])


@dataclass(eq=False)
class DgmParams:
    mu_control: np.ndarray = field(default_factory=lambda: np.array([2.14, 2.47, 2.52, 2.54]))
    sigma: np.ndarray = field(default_factory=_default_sigma)
    delta: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.1, 0.1, 0.1]))
    theta_on: float = 0.3
    theta_off: float = 0.3
    n_per_arm: int = 375

    def __post_init__(self):
        self.mu_control = np.asarray(self.mu_control, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.mu_control.shape != (4,) or self.delta.shape != (4,) or self.sigma.shape != (4, 4):
            raise ConfigurationError("mu_control and delta need 4 entries, sigma must be 4x4")
        if self.delta[0] != 0.0:
            raise ConfigurationError("delta[0] must be 0: no treatment effect at baseline")
        if self.theta_on < 0 or self.theta_off < 0:
            raise ConfigurationError("heterogeneity SDs must be non-negative")
        if self.n_per_arm < 1:
            raise ConfigurationError("n_per_arm must be positive")
        try:
            cholesky(self.sigma)
        except (NotPositiveDefinite, ValueError) as exc:
            raise ConfigurationError(f"sigma is not a valid covariance: {exc}") from exc

    def arm_mean(self, arm):
        """On-treatment expected outcome vector for an arm."""
        return self.mu_control + (self.delta if arm == Arm.ACTIVE else 0.0)

    def omega(self):
        """Propensity scaling 0.5 / marginal SD of the generated on-treatment outcome."""
        return 0.5 / np.sqrt(np.diag(self.sigma) + self.theta_on ** 2)

    def to_dict(self):
        return {
            "mu_control": self.mu_control.tolist(),
            "sigma": self.sigma.tolist(),
            "delta": self.delta.tolist(),
            "theta_on": self.theta_on,
            "theta_off": self.theta_off,
            "n_per_arm": self.n_per_arm,
        }


@dataclass(eq=False)
class Scenario:
    mechanism: Mechanism
    disc_rate_control: float
    disc_rate_active: float
    withdrawal_balance: Balance
    trajectory: Trajectory
    dgm: DgmParams = field(default_factory=DgmParams)
    scenario_id: int = 0
    retain_off_treatment: bool = True

    def __post_init__(self):
        self.mechanism = Mechanism(self.mechanism)
        self.withdrawal_balance = Balance(self.withdrawal_balance)
        self.trajectory = Trajectory(self.trajectory)
        for rate in (self.disc_rate_control, self.disc_rate_active):
            if not 0.0 <= rate <= 1.0:
                raise ConfigurationError(f"discontinuation rate {rate} outside [0, 1]")

    def disc_rate(self, arm):
        return self.disc_rate_active if arm == Arm.ACTIVE else self.disc_rate_control

    @property
    def label(self):
        rates = f"{self.disc_rate_control:.0%}/{self.disc_rate_active:.0%}"
        return f"{self.trajectory.value} {self.mechanism.value} {rates} {self.withdrawal_balance.value}"

    def to_dict(self):
        return {
            "scenario_id": self.scenario_id,
            "mechanism": self.mechanism.value,
            "disc_rate_control": self.disc_rate_control,
            "disc_rate_active": self.disc_rate_active,
            "withdrawal_balance": self.withdrawal_balance.value,
            "trajectory": self.trajectory.value,
            "retain_off_treatment": self.retain_off_treatment,
            "dgm": self.dgm.to_dict(),
        }

    def __str__(self):
        return f"#{self.scenario_id} {self.label}"


def scenario_id_for(trajectory, mechanism, rate_pair, balance):
    local = (
        12 * list(Mechanism).index(Mechanism(mechanism))
        + 3 * RATE_PAIRS.index(tuple(rate_pair))
        + list(Balance).index(Balance(balance))
        + 1
    )
    return 36 * list(Trajectory).index(Trajectory(trajectory)) + local


def scenario_grid(dgm=None, retain_off_treatment=True):
    """The 72 scenarios ordered by id."""
    dgm = dgm or DgmParams()
    grid = []
    for trajectory in Trajectory:
        for mechanism in Mechanism:
            for rates in RATE_PAIRS:
                for balance in Balance:
                    grid.append(Scenario(
                        mechanism=mechanism,
                        disc_rate_control=rates[0],
                        disc_rate_active=rates[1],
                        withdrawal_balance=balance,
                        trajectory=trajectory,
                        dgm=dgm,
                        scenario_id=scenario_id_for(trajectory, mechanism, rates, balance),
                        retain_off_treatment=retain_off_treatment,
                    ))
    return grid


def get_scenario(scenario_id, dgm=None, retain_off_treatment=True):
    if not 1 <= scenario_id <= 72:
        raise ConfigurationError(f"scenario id {scenario_id} outside 1..72")
    return scenario_grid(dgm, retain_off_treatment)[scenario_id - 1]


@dataclass
class SubjectRecord:
    id: int
    arm: Arm
    y_on: np.ndarray
    y_off: np.ndarray
    disc_time: int  # 0 = completed on treatment
    withdrawn: bool
    observed: np.ndarray  # NaN where missing

    @property
    def discontinued(self):
        return self.disc_time > 0


def generate_potential_outcomes(arm, dgm, rng, trajectory=Trajectory.RETURN_TO_BASELINE, size=None):
    """
    Potential on-treatment (4) and off-treatment (3, timepoints 1..3) outcomes.

    With ``size`` the result is a pair of ``(size, 4)`` / ``(size, 3)`` arrays.
    """
    n = 1 if size is None else int(size)
    active = arm == Arm.ACTIVE
    y_c = mvn_sample(dgm.mu_control, dgm.sigma, rng, size=n)
    u = dgm.theta_on * rng.normal(n)
    v = dgm.theta_off * rng.normal(n)
    y_on = y_c + (dgm.delta if active else 0.0) + u[:, None]

    post = slice(1, None)
    if Trajectory(trajectory) == Trajectory.RETURN_TO_BASELINE:
        shift = -dgm.mu_control[post] - (dgm.delta[post] if active else 0.0) + dgm.mu_control[0]
    else:
        shift = 0.0 if active else dgm.delta[post]
    y_off = y_on[:, post] + shift + v[:, None]
    if size is None:
        return y_on[0], y_off[0]
    return y_on, y_off


def disc_counts(n_arm, rate):
    """Exact discontinuations per timepoint, 5:3:2 split with cumulative half-up rounding."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate {rate} outside [0, 1]")
    cumulative = rate * n_arm * np.cumsum(DISC_SPLIT)
    # half-up, robust to representation error in rate * n
    rounded = np.floor(cumulative + 0.5 + 1e-9).astype(int)
    return tuple(int(c) for c in np.diff(np.concatenate(([0], rounded))))


def select_discontinuations(y_on, ids, mechanism, counts, dgm, rng):
    """
    Assign ``disc_time`` (0 = never) to the subjects of one arm.

    At each timepoint the subjects still on treatment are ranked by
    ``kappa = omega_j * y - logit(u)`` and the ``counts[j]`` lowest discontinue;
    DNAR2 takes the highest at the first timepoint. Ties go to the lower id.
    """
    y_on = np.asarray(y_on, dtype=float)
    ids = np.asarray(ids)
    mechanism = Mechanism(mechanism)
    omega = dgm.omega()
    disc_time = np.zeros(y_on.shape[0], dtype=int)
    for j in range(1, N_POST + 1):
        pool = np.flatnonzero(disc_time == 0)
        count = int(counts[j - 1])
        if count > pool.size:
            raise InfeasibleCounts(f"timepoint {j}: {count} to select from {pool.size} on treatment")
        u = rng.uniform(pool.size)
        y = y_on[pool, j - 1] if mechanism == Mechanism.DAR else y_on[pool, j]
        kappa = omega[j] * y - logit(u)
        if mechanism == Mechanism.DNAR2 and j == 1:
            kappa = -kappa
        order = np.lexsort((ids[pool], kappa))
        disc_time[pool[order[:count]]] = j
    return disc_time


def withdrawal_prob(balance, disc_time):
    if disc_time not in (1, 2, 3):
        raise ValueError(f"disc_time must be 1, 2 or 3, got {disc_time}")
    return WITHDRAWAL_PROBS[Balance(balance)][disc_time - 1]


def apply_withdrawal(disc_time, balance, rng, arm=None, retain_off_treatment=False):
    """
    MCAR withdrawal at the point of discontinuation.

    Returns the ``withdrawn`` flags. With ``retain_off_treatment`` a non-empty
    (arm, disc_time) cell never loses every subject: the one with the largest
    uniform draw stays in follow-up.
    """
    disc_time = np.asarray(disc_time, dtype=int)
    arm = np.zeros_like(disc_time) if arm is None else np.asarray(arm, dtype=int)
    u = rng.uniform(disc_time.size)
    threshold = np.zeros(disc_time.size)
    for j in range(1, N_POST + 1):
        threshold[disc_time == j] = withdrawal_prob(balance, j)
    withdrawn = (disc_time > 0) & (u < threshold)

    if retain_off_treatment:
        for a in np.unique(arm):
            for j in range(1, N_POST + 1):
                cell = np.flatnonzero((arm == a) & (disc_time == j))
                if cell.size and withdrawn[cell].all():
                    keep = cell[np.argmax(u[cell])]
                    withdrawn[keep] = False
                    logger.debug("arm %s, disc_time %d: kept subject index %d in follow-up", a, j, keep)
    return withdrawn


def treatment_policy_outcomes(y_on, y_off, disc_time):
    """Outcomes actually exhibited before any withdrawal: on-treatment until disc_time, then off."""
    out = np.array(y_on, dtype=float, copy=True)
    disc_time = np.asarray(disc_time)
    for j in range(1, N_POST + 1):
        off = (disc_time > 0) & (disc_time <= j)
        out[off, j] = y_off[off, j - 1]
    return out


def observed_outcomes(y_on, y_off, disc_time, withdrawn):
    out = treatment_policy_outcomes(y_on, y_off, disc_time)
    disc_time = np.asarray(disc_time)
    withdrawn = np.asarray(withdrawn, dtype=bool)
    for j in range(1, N_POST + 1):
        out[withdrawn & (disc_time <= j), j] = np.nan
    return out


def true_estimand(scenario, timepoint=N_POST):
    """Analytic (mean change control, mean change active, effect) in mL."""
    if timepoint not in (1, 2, 3):
        raise ValueError(f"timepoint must be 1, 2 or 3, got {timepoint}")
    dgm = scenario.dgm
    j = timepoint
    changes = []
    for arm in Arm:
        cum_rate = scenario.disc_rate(arm) * float(np.sum(DISC_SPLIT[:j]))
        mu_on = dgm.arm_mean(arm)
        if scenario.trajectory == Trajectory.RETURN_TO_BASELINE:
            mu_off = mu_on[0]
        else:
            mu_off = dgm.arm_mean(Arm.ACTIVE)[j]
        expected = (1.0 - cum_rate) * mu_on[j] + cum_rate * mu_off
        changes.append((expected - mu_on[0]) * ML_PER_LITRE)
    control, active = changes
    return control, active, active - control


@dataclass(eq=False)
class TrialDataset:
    """One replicate, held column-wise; subject ``i`` has id ``ids[i]``."""
    scenario: Scenario
    replicate_id: int
    ids: np.ndarray
    arm: np.ndarray
    y_on: np.ndarray
    y_off: np.ndarray
    disc_time: np.ndarray
    withdrawn: np.ndarray

    @property
    def n(self):
        return self.ids.size

    @property
    def observed(self):
        return observed_outcomes(self.y_on, self.y_off, self.disc_time, self.withdrawn)

    def full_outcomes(self):
        return treatment_policy_outcomes(self.y_on, self.y_off, self.disc_time)

    @property
    def subjects(self):
        observed = self.observed
        return [
            SubjectRecord(
                id=int(self.ids[i]),
                arm=Arm(int(self.arm[i])),
                y_on=self.y_on[i],
                y_off=self.y_off[i],
                disc_time=int(self.disc_time[i]),
                withdrawn=bool(self.withdrawn[i]),
                observed=observed[i],
            )
            for i in range(self.n)
        ]

    def without_withdrawal(self):
        return replace(self, withdrawn=np.zeros(self.n, dtype=bool))

    def to_frame(self, outcomes=None):
        outcomes = self.observed if outcomes is None else outcomes
        frame = pd.DataFrame({
            "id": self.ids,
            "arm": [Arm(int(a)).label for a in self.arm],
        })
        for j in range(N_POST + 1):
            frame[f"y{j}"] = outcomes[:, j]
        frame["disc_time"] = self.disc_time
        frame["withdrawn"] = self.withdrawn.astype(int)
        frame["replicate"] = self.replicate_id
        frame["scenario_id"] = self.scenario.scenario_id
        return frame

    def to_csv(self, path_or_buffer):
        self.to_frame().to_csv(path_or_buffer, index=False, na_rep="")


def generate_trial(scenario, replicate_id, seed):
    """
    Generate one replicate.

    Potential outcomes depend only on ``(seed, replicate_id)`` so that every
    scenario sees the same simulated patients; selection and withdrawal
    streams are specific to the scenario.
    """
    dgm = scenario.dgm
    n = dgm.n_per_arm
    base = RngStream.derive(seed, "trial", replicate_id)
    arms = np.repeat([Arm.CONTROL, Arm.ACTIVE], n)
    ids = np.arange(1, 2 * n + 1)
    y_on = np.empty((2 * n, N_POST + 1))
    y_off = np.empty((2 * n, N_POST))
    disc_time = np.zeros(2 * n, dtype=int)

    for arm in Arm:
        rows = slice(arm * n, (arm + 1) * n)
        y_on[rows], y_off[rows] = generate_potential_outcomes(
            arm, dgm, base.spawn("outcomes", int(arm)), scenario.trajectory, size=n
        )
        counts = disc_counts(n, scenario.disc_rate(arm))
        disc_time[rows] = select_discontinuations(
            y_on[rows], ids[rows], scenario.mechanism, counts, dgm,
            base.spawn("discontinuation", scenario.scenario_id, int(arm)),
        )

    withdrawn = apply_withdrawal(
        disc_time, scenario.withdrawal_balance,
        base.spawn("withdrawal", scenario.scenario_id),
        arm=arms, retain_off_treatment=scenario.retain_off_treatment,
    )
    return TrialDataset(
        scenario=scenario,
        replicate_id=replicate_id,
        ids=ids,
        arm=arms.astype(int),
        y_on=y_on,
        y_off=y_off,
        disc_time=disc_time,
        withdrawn=withdrawn,
    )


def dgm_from_dict(data, base=None):
    """Build DgmParams from a (partial) mapping of overrides."""
    merged = (base or DgmParams()).to_dict()
    merged.update({k: v for k, v in data.items() if v is not None})
    return DgmParams(**merged)


def scenario_from_dict(data):
    fields = dict(data)
    dgm = fields.pop("dgm", None)
    if dgm is not None and not isinstance(dgm, DgmParams):
        dgm = dgm_from_dict(dgm)
    return Scenario(dgm=dgm or DgmParams(), **fields)
