"""
Closed-form bias and variance-inflation calculators for a simplified
final-timepoint set-up: per arm, n1 complete on treatment (expected change
mu1), n2 discontinued but followed up and n3 discontinued and withdrawn (both
expected change mu2).
"""
import math

from .exceptions import DivisionByZero
from .trialgen import Arm, Trajectory, RATE_PAIRS

ML_PER_LITRE = 1000.0


def theory_bias(n1, n2, mu1, mu2):
    """Common-MAR bias when as many discontinuers withdraw as stay (n3 = n2)."""
    if n1 <= 0 or n2 <= 0:
        raise ValueError("n1 and n2 must be positive")
    return n1 * n2 * (mu1 - mu2) / ((n1 + n2) * (n1 + 2 * n2))


def common_mar_bias(n1, n2, n3, mu1, mu2):
    """Common-MAR bias for any withdrawn count; equals theory_bias when n3 == n2."""
    if n1 + n2 <= 0:
        raise DivisionByZero("no observed subjects")
    n = n1 + n2 + n3
    return n1 * n3 * (mu1 - mu2) / ((n1 + n2) * n)


def theory_var_inflation(n1, n2, n3):
    """Relative variance increase of a group mean from the n3 missing outcomes."""
    if n2 == 0:
        raise DivisionByZero("n2 = 0: no observed off-treatment outcomes")
    n = n1 + n2 + n3
    return (n3 / n) * (1 + n3 / n2)


def arm_var_inflation(rate, withdrawal=0.5):
    if rate == 0:
        return 0.0
    return theory_var_inflation(1.0 - rate, rate * (1.0 - withdrawal), rate * withdrawal)


def effect_var_inflation(rate_control, rate_active, withdrawal=0.5):
    """Treatment-effect inflation: the average of the two arms' group-mean inflations."""
    return (arm_var_inflation(rate_control, withdrawal) + arm_var_inflation(rate_active, withdrawal)) / 2.0


def halfwidth_bound(inflation):
    """CI halfwidth increase in percent implied by a variance inflation."""
    return 100.0 * (math.sqrt(1.0 + inflation) - 1.0)


def scenario_bias(scenario, withdrawal=0.5):
    """Predicted common-MAR bias (control, active, effect) in mL at the final timepoint."""
    dgm = scenario.dgm
    biases = []
    for arm in Arm:
        mean = dgm.arm_mean(arm)
        mu1 = (mean[3] - mean[0]) * ML_PER_LITRE
        if scenario.trajectory == Trajectory.RETURN_TO_BASELINE:
            mu2 = 0.0
        else:
            mu2 = (dgm.arm_mean(Arm.ACTIVE)[3] - mean[0]) * ML_PER_LITRE
        rate = scenario.disc_rate(arm)
        if rate == 0:
            biases.append(0.0)
            continue
        biases.append(common_mar_bias(1.0 - rate, rate * (1.0 - withdrawal), rate * withdrawal, mu1, mu2))
    control, active = biases
    return control, active, active - control


def inflation_table(withdrawal=0.5):
    """Variance inflation and halfwidth bound for each discontinuation-rate pair of the grid."""
    rows = []
    for rate_control, rate_active in RATE_PAIRS:
        inflation = effect_var_inflation(rate_control, rate_active, withdrawal)
        rows.append({
            "disc_rate_control": rate_control,
            "disc_rate_active": rate_active,
            "inflation_control": arm_var_inflation(rate_control, withdrawal),
            "inflation_active": arm_var_inflation(rate_active, withdrawal),
            "inflation_effect": inflation,
            "halfwidth_bound_pct": halfwidth_bound(inflation),
        })
    return rows
