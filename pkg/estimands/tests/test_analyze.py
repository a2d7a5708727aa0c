import numpy as np
from django.test import SimpleTestCase, tag

from estimands.analyze import (
    ComponentEstimate,
    EstimateTriple,
    ancova,
    barnard_rubin_df,
    ci_halfwidth,
    cholesky_from_theta,
    fit_mmrm,
    mmrm,
    mmrm_data,
    pool_triples,
    reml_loglik,
    rubin_pool,
    single_fit_interval,
    t_quantile,
)
from estimands.exceptions import IncompleteData, InsufficientData, TooFewCopies
from estimands.trialgen import generate_trial, get_scenario


def toy_outcomes(n=60, seed=0):
    rng = np.random.default_rng(seed)
    arm = np.repeat([0, 1], n // 2)
    y0 = rng.normal(2.0, 0.5, size=n)
    post = y0[:, None] + np.array([0.3, 0.35, 0.4]) + 0.1 * arm[:, None] + rng.normal(0, 0.3, size=(n, 3))
    return np.column_stack([y0, post]), arm


class AncovaTests(SimpleTestCase):

    def test_matches_direct_regression(self):
        y, arm = toy_outcomes()
        triple = ancova(y, arm, timepoint=3)
        x = np.column_stack([np.ones(len(arm)), arm, y[:, 0]])
        beta, *_ = np.linalg.lstsq(x, y[:, 3] - y[:, 0], rcond=None)
        self.assertAlmostEqual(triple.effect.point, beta[1] * 1000.0, places=8)
        self.assertAlmostEqual(triple.mean_control.point, (beta[0] + beta[2] * y[:, 0].mean()) * 1000.0, places=8)
        self.assertEqual(triple.effect.df, len(arm) - 3)

    def test_effect_is_difference_of_means(self):
        y, arm = toy_outcomes()
        triple = ancova(y, arm)
        self.assertAlmostEqual(triple.effect.point, triple.mean_active.point - triple.mean_control.point, places=9)

    def test_earlier_timepoint(self):
        y, arm = toy_outcomes()
        y[:, 3] = np.nan
        triple = ancova(y, arm, timepoint=1)
        self.assertTrue(np.isfinite(triple.effect.point))

    def test_incomplete(self):
        y, arm = toy_outcomes()
        y[0, 3] = np.nan
        with self.assertRaises(IncompleteData):
            ancova(y, arm)

    def test_single_arm(self):
        y, _ = toy_outcomes()
        with self.assertRaises(InsufficientData):
            ancova(y, np.zeros(len(y)))


class MmrmTests(SimpleTestCase):

    def test_complete_data_matches_ancova(self):
        y, arm = toy_outcomes(n=80, seed=3)
        fit = fit_mmrm(y, arm)
        self.assertTrue(fit.converged)
        for j in (1, 2, 3):
            got = fit.estimates(j)
            expected = ancova(y, arm, j)
            self.assertAlmostEqual(got.effect.point, expected.effect.point, delta=1e-6 * 1000.0)
            self.assertAlmostEqual(got.mean_control.point, expected.mean_control.point, delta=1e-6 * 1000.0)

    def test_covariance_is_positive_definite(self):
        y, arm = toy_outcomes(n=80, seed=3)
        fit = fit_mmrm(y, arm)
        self.assertTrue(np.all(np.linalg.eigvalsh(fit.covariance) > 0))
        self.assertEqual(fit.df, 80 - 9)

    def test_monotone_missing_data(self):
        data = generate_trial(get_scenario(18), 1, seed=2)
        triple = mmrm(data.observed, data.arm)
        self.assertTrue(np.isfinite(triple.effect.point))
        self.assertGreater(triple.effect.variance, 0.0)
        self.assertAlmostEqual(triple.effect.point, triple.mean_active.point - triple.mean_control.point, places=8)

    def test_converges_on_generated_trials(self):
        for scenario_id, replicates in ((18, range(1, 21)), (1, range(1, 6)), (41, range(1, 6))):
            for replicate in replicates:
                data = generate_trial(get_scenario(scenario_id), replicate, seed=3)
                with self.subTest(scenario=scenario_id, replicate=replicate):
                    fit = fit_mmrm(data.observed, data.arm)
                    self.assertTrue(fit.converged)
                    self.assertTrue(np.all(np.diag(cholesky_from_theta(fit.theta)) > 1e-3))

    def test_optimum_beats_random_search(self):
        y, arm = toy_outcomes(n=12, seed=4)
        y[10, 3] = np.nan
        y[11, 2:] = np.nan
        data = mmrm_data(y, arm)
        fit = fit_mmrm(y, arm)
        self.assertAlmostEqual(fit.loglik, reml_loglik(fit.theta, data), places=9)

        rng = np.random.default_rng(0)
        best = -np.inf
        for _ in range(10000):
            theta = rng.uniform(-0.5, 0.5, size=6)
            theta[[0, 2, 5]] = rng.uniform(0.02, 1.0, size=3)
            best = max(best, reml_loglik(theta, data))
        self.assertGreaterEqual(fit.loglik, best - 1e-9)

    def test_non_monotone_rejected(self):
        y, arm = toy_outcomes()
        y[0, 1] = np.nan
        with self.assertRaises(IncompleteData):
            mmrm_data(y, arm)

    def test_missing_baseline_rejected(self):
        y, arm = toy_outcomes()
        y[0, 0] = np.nan
        with self.assertRaises(IncompleteData):
            mmrm_data(y, arm)

    def test_too_few_subjects(self):
        y, arm = toy_outcomes(n=8)
        with self.assertRaises(InsufficientData):
            fit_mmrm(y, arm)

    def test_reml_invariant_to_factor_sign_flips(self):
        y, arm = toy_outcomes(n=40, seed=1)
        data = mmrm_data(y, arm)
        theta = np.array([0.3, 0.1, 0.25, -0.05, 0.08, 0.2])
        flipped = cholesky_from_theta(theta) @ np.diag([1.0, -1.0, -1.0])
        theta_flipped = flipped[np.tril_indices(3)]
        self.assertAlmostEqual(reml_loglik(theta, data), reml_loglik(theta_flipped, data), places=8)

    def test_singular_factor_has_no_likelihood(self):
        y, arm = toy_outcomes(n=40, seed=1)
        data = mmrm_data(y, arm)
        self.assertEqual(reml_loglik(np.zeros(6), data), -np.inf)


class RubinPoolTests(SimpleTestCase):

    def test_hand_example(self):
        pooled = rubin_pool([1.0, 2.0, 3.0], [0.5, 0.5, 0.5], complete_data_df=100)
        self.assertEqual(pooled.point, 2.0)
        self.assertEqual(pooled.within_var, 0.5)
        self.assertEqual(pooled.between_var, 1.0)
        self.assertAlmostEqual(pooled.total_var, 0.5 + (4.0 / 3.0) * 1.0, places=12)
        lam = (4.0 / 3.0) / pooled.total_var
        nu_old = 2.0 / lam ** 2
        nu_obs = 101.0 / 103.0 * 100.0 * (1.0 - lam)
        self.assertAlmostEqual(pooled.df, nu_old * nu_obs / (nu_old + nu_obs), places=10)
        self.assertAlmostEqual(pooled.ci_high - pooled.point, t_quantile(pooled.df) * np.sqrt(pooled.total_var))

    def test_two_copies(self):
        pooled = rubin_pool([0.0, 2.0], [1.0, 1.0], complete_data_df=100)
        self.assertEqual(pooled.point, 1.0)
        self.assertEqual(pooled.between_var, 2.0)
        self.assertAlmostEqual(pooled.total_var, 4.0, places=12)

    def test_df_decreases_as_between_variance_grows(self):
        dfs = [barnard_rubin_df(5, 1.0, b, 100) for b in (0.0, 0.05, 0.2, 1.0, 5.0)]
        for earlier, later in zip(dfs, dfs[1:]):
            self.assertGreater(earlier, later)

    def test_halfwidth_with_infinite_df(self):
        pooled = single_fit_interval(ComponentEstimate(0.0, 25.0, float("inf")))
        self.assertAlmostEqual(ci_halfwidth(pooled), 9.80, places=2)

    def test_identical_copies(self):
        pooled = rubin_pool([2.0] * 5, [0.25] * 5, complete_data_df=50)
        self.assertEqual(pooled.between_var, 0.0)
        self.assertEqual(pooled.total_var, 0.25)
        self.assertAlmostEqual(pooled.df, 51.0 / 53.0 * 50.0)
        # close to the single-fit interval
        single = single_fit_interval(ComponentEstimate(2.0, 0.25, 50))
        self.assertAlmostEqual(ci_halfwidth(pooled), ci_halfwidth(single), delta=1e-3)

    def test_zero_variance_keeps_complete_data_df(self):
        self.assertEqual(barnard_rubin_df(5, 0.0, 0.0, 42), 42.0)

    def test_df_bounded_by_complete_data_df(self):
        for b in (0.01, 0.1, 1.0):
            self.assertLessEqual(barnard_rubin_df(25, 1.0, b, 700), 700)

    def test_too_few_copies(self):
        with self.assertRaises(TooFewCopies):
            rubin_pool([1.0], [0.1], 10)

    def test_pool_triples(self):
        triples = [
            EstimateTriple(ComponentEstimate(c, 1.0, 30), ComponentEstimate(a, 1.0, 30), ComponentEstimate(a - c, 2.0, 30))
            for c, a in ((1.0, 3.0), (1.5, 3.0), (0.5, 3.5))
        ]
        pooled = pool_triples(triples, 30)
        self.assertAlmostEqual(pooled["effect"].point, pooled["mean_active"].point - pooled["mean_control"].point)

    def test_normal_quantile_for_infinite_df(self):
        self.assertAlmostEqual(t_quantile(float("inf")), 1.959963984540054)


class CoverageOracleTests(SimpleTestCase):

    @tag('slow')
    def test_ancova_interval_has_nominal_coverage(self):
        rng = np.random.default_rng(12)
        hits = 0
        sims = 10000
        for _ in range(sims):
            arm = np.repeat([0, 1], 20)
            y0 = rng.normal(2.0, 0.5, size=40)
            y = np.column_stack([y0, np.zeros((40, 2)), y0 + 0.1 * arm + rng.normal(0, 0.3, size=40)])
            pooled = single_fit_interval(ancova(y, arm).effect)
            hits += pooled.ci_low <= 100.0 <= pooled.ci_high
        self.assertAlmostEqual(hits / sims, 0.95, delta=0.007)
