"""Conjugate reward families."""

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from nslb.core.exceptions import UsageError
from nslb.core.types import Context, MeanRewardModel
from nslb.services.conjugate_service import (
    BetaBernoulliFamily,
    DiscreteGridFamily,
    GaussianLinearFamily,
    GaussianTabularFamily,
    conjugate_posterior_sample,
    gaussian_posterior,
    sample_dirichlet_rows,
)


class TestGaussianPosterior:

    def test_matches_grid_integration(self):
        """Closed-form posterior mean and variance against numerical integration, 100 instances."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            mu0 = rng.uniform(-1.0, 1.0)
            sigma0 = rng.uniform(0.2, 2.0)
            sigma = rng.uniform(0.2, 2.0)
            data = rng.normal(rng.normal(mu0, sigma0), sigma, size=int(rng.integers(0, 21)))
            mean, var = gaussian_posterior(mu0, sigma0 ** 2, sigma ** 2, data.sum(), data.size)

            grid = np.linspace(mean - 12 * np.sqrt(var), mean + 12 * np.sqrt(var), 40001)
            log_density = stats.norm.logpdf(grid, mu0, sigma0)
            if data.size:
                log_density = log_density + stats.norm.logpdf(data[:, None], grid[None, :], sigma).sum(axis=0)
            density = np.exp(log_density - log_density.max())
            density /= trapezoid(density, grid)
            grid_mean = trapezoid(grid * density, grid)
            grid_var = trapezoid((grid - grid_mean) ** 2 * density, grid)
            assert mean == pytest.approx(grid_mean, abs=1e-6)
            assert var == pytest.approx(grid_var, abs=1e-6)

    def test_no_data_is_prior(self):
        mean, var = gaussian_posterior(0.3, 0.04, 0.25, 0.0, 0.0)
        assert mean == pytest.approx(0.3)
        assert var == pytest.approx(0.04)


class TestTabularFamilies:

    def test_gaussian_update_and_sample(self, rng):
        family = GaussianTabularFamily(np.array([[0.0, 1.0], [0.5, 0.5]]), 0.5, 0.5)
        reward_stats = family.initial_stats(3)
        family.update(reward_stats, np.array([0, 1, 1]), 1, Context.empty(2), 2.0)
        assert reward_stats.psi[1, 1, 1] == 2.0
        assert reward_stats.m[0, 1, 0] == 1.0
        assert reward_stats.m[0, 1, 1] == 0.0
        mean, var = family.posterior(reward_stats)
        assert mean[0, 1, 0] == pytest.approx((0.25 * 2.0 + 0.25 * 0.5) / 0.5)
        assert var[0, 1, 0] == pytest.approx(0.125)
        assert family.sample_theta(reward_stats, rng).shape == (3, 2, 2)
        assert conjugate_posterior_sample(family, reward_stats, 1, rng).shape == (3, 2)
        with pytest.raises(UsageError):
            conjugate_posterior_sample(family, reward_stats, 2, rng)

    def test_beta_bernoulli_counts(self):
        family = BetaBernoulliFamily(np.full((2, 2), 2.0), np.full((2, 2), 3.0))
        reward_stats = family.initial_stats(1)
        for reward in (1.0, 1.0, 0.0):
            family.update(reward_stats, np.array([0]), 1, Context.empty(2), reward)
        a, b = family.posterior(reward_stats)
        assert a[0, 1, 0] == 4.0
        assert b[0, 1, 0] == 4.0
        assert a[0, 0, 0] == 2.0

    def test_beta_moment_matching(self):
        family = BetaBernoulliFamily.moment_matched(np.array([[0.3, 0.6]]), 0.1)
        mean = family.prior_a / (family.prior_a + family.prior_b)
        var = family.prior_a * family.prior_b / ((family.prior_a + family.prior_b) ** 2
                                                 * (family.prior_a + family.prior_b + 1))
        np.testing.assert_allclose(mean, [[0.3, 0.6]])
        np.testing.assert_allclose(np.sqrt(var), 0.1, rtol=1e-9)

    def test_prior_mean_model(self):
        family = GaussianTabularFamily(np.array([[0.2, 0.4]]), 0.1, 0.5)
        np.testing.assert_allclose(family.prior_mean_model().values, [[0.2, 0.4]])


class TestLinearFamily:

    def test_posterior_matches_closed_form(self, rng):
        dim = 3
        prior_means = rng.normal(size=(2, dim))
        prior_covs = np.stack([np.eye(dim) * 0.5, np.eye(dim) * 2.0])
        family = GaussianLinearFamily(prior_means, prior_covs, 0.5)
        reward_stats = family.initial_stats(1)
        features, rewards = [], []
        for _ in range(15):
            context = Context(rng.normal(size=(4, dim)))
            reward = float(rng.normal())
            family.update(reward_stats, np.array([1]), 2, context, reward)
            features.append(context.arm_features[2])
            rewards.append(reward)
        x, r = np.array(features), np.array(rewards)
        precision = np.linalg.inv(prior_covs[1]) + x.T @ x / 0.25
        expected = np.linalg.solve(precision, np.linalg.inv(prior_covs[1]) @ prior_means[1] + x.T @ r / 0.25)
        np.testing.assert_allclose(reward_stats.arrays["post_mean"][0, 1], expected, atol=1e-10)
        np.testing.assert_allclose(reward_stats.arrays["post_mean"][0, 0], prior_means[0])
        chol = reward_stats.arrays["post_chol"][0, 1]
        np.testing.assert_allclose(chol @ chol.T, np.linalg.inv(precision), atol=1e-10)

    def test_means_shape(self, rng):
        family = GaussianLinearFamily(np.zeros((2, 3)), np.stack([np.eye(3)] * 2), 0.5)
        theta = family.sample_theta(family.initial_stats(5), rng)
        assert family.means(theta, Context(rng.normal(size=(7, 3)))).shape == (5, 7, 2)
        with pytest.raises(UsageError):
            family.means(theta, Context(rng.normal(size=(7, 2))))


class TestGridFamily:

    def test_cell_posterior_accumulates_log_likelihood(self):
        models = [MeanRewardModel.tabular([[0.0, 0.0]]), MeanRewardModel.tabular([[1.0, 1.0]])]
        family = DiscreteGridFamily(models, prior_weights=[0.5, 0.5], noise_std=0.5)
        reward_stats = family.initial_stats(2)
        for reward in (0.9, 1.1, 0.8):
            family.update(reward_stats, np.array([0, 1]), 0, Context.empty(1), reward)
        log_odds = sum(stats.norm.logpdf(r, 1.0, 0.5) - stats.norm.logpdf(r, 0.0, 0.5) for r in (0.9, 1.1, 0.8))
        posterior = family.cell_posterior(reward_stats)
        np.testing.assert_allclose(posterior[:, 1], 1.0 / (1.0 + np.exp(-log_odds)))
        assert reward_stats.m[0].tolist() == [3.0, 0.0]

    def test_prior_mean_model(self):
        models = [MeanRewardModel.tabular([[0.0, 0.4]]), MeanRewardModel.tabular([[1.0, 0.8]])]
        family = DiscreteGridFamily(models, prior_weights=[1.0, 3.0])
        np.testing.assert_allclose(family.prior_mean_model().values, [[0.75, 0.7]])


def test_dirichlet_rows_are_distributions(rng):
    rows = sample_dirichlet_rows(np.array([[796.0, 1.0, 1.0], [1e-300, 1e-300, 1e-300]]), rng)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0)
    assert np.all(rows >= 0)
