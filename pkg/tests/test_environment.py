"""Synthetic and superuser environments."""

import numpy as np
import pytest

from nslb.api.schemas import FixedPeriodSchedule, StochasticSchedule
from nslb.core.constants import GenreSampling, ModelSource, RewardNoise
from nslb.core.exceptions import ConfigurationError
from nslb.core.types import TransitionMatrix
from nslb.services.conjugate_service import BetaBernoulliFamily, DiscreteGridFamily, GaussianLinearFamily
from nslb.services.environment_service import (
    MovieCatalog,
    SuperuserEnvironment,
    SyntheticEnvironment,
    build_environment,
    build_superuser_transition,
    sample_movie_context,
    step_latent,
)
from nslb.services.experiment_service import make_streams

from .conftest import synthetic_config


def _states(environment, horizon):
    states = []
    for t in range(1, horizon + 1):
        states.append(environment.state)
        environment.advance(t)
    return states


class TestSyntheticEnvironment:

    def test_fixed_period_cycles(self, streams):
        environment = SyntheticEnvironment(synthetic_config(schedule=FixedPeriodSchedule(period=4)), 20, streams)
        start = environment.state
        states = _states(environment, 20)
        expected = [(start + (t - 1) // 4) % 2 for t in range(1, 21)]
        assert states == expected

    def test_step_latent_needs_state_count(self, rng):
        with pytest.raises(ConfigurationError):
            step_latent(0, FixedPeriodSchedule(period=3), 3, rng)
        assert step_latent(2, FixedPeriodSchedule(period=3), 3, rng, num_states=3) == 0
        assert step_latent(2, FixedPeriodSchedule(period=3), 2, rng, num_states=3) == 2

    def test_explicit_transition_is_used(self, rng):
        schedule = StochasticSchedule(transition=[[0.0, 1.0], [1.0, 0.0]])
        assert step_latent(0, schedule, 1, rng, num_states=2) == 1
        assert step_latent(1, schedule, 1, rng, num_states=2) == 0

    def test_stochastic_switch_rate(self, rng):
        schedule = StochasticSchedule(change_prob=0.1)
        state, switches = 0, 0
        for t in range(1, 20_001):
            following = step_latent(state, schedule, t, rng, num_states=3)
            switches += following != state
            state = following
        assert switches / 20_000 == pytest.approx(0.1, abs=0.01)

    def test_latent_sequence_is_independent_of_actions(self, stochastic_config):
        """Identical streams give identical latent paths and reward noise whatever is pulled."""
        first = SyntheticEnvironment(stochastic_config, 200, make_streams(3, 1))
        second = SyntheticEnvironment(stochastic_config, 200, make_streams(3, 1))
        noise_first, noise_second = [], []
        for t in range(1, 201):
            assert first.state == second.state
            context = first.observe_context(t)
            means = first.true_means(context)
            noise_first.append(first.pull(0, context) - means[0])
            noise_second.append(second.pull(2, context) - means[2])
            first.advance(t)
            second.advance(t)
        np.testing.assert_allclose(noise_first, noise_second, atol=1e-12)

    def test_fixed_means_and_rewards(self, streams):
        config = synthetic_config(means=[[0.1, 0.9], [0.5, 0.5], [0.2, 0.3]])
        environment = SyntheticEnvironment(config, 10, streams)
        context = environment.observe_context(1)
        np.testing.assert_allclose(environment.true_means(context),
                                   np.asarray(config.means)[:, environment.state])
        np.testing.assert_allclose(environment.knowledge.model.values, config.means)

    def test_bernoulli_rewards_are_binary(self, streams):
        config = synthetic_config(noise=RewardNoise.BERNOULLI, means=[[0.2, 0.7], [0.5, 0.5], [0.9, 0.1]])
        environment = SyntheticEnvironment(config, 50, streams)
        rewards = {environment.pull(a, environment.observe_context(1)) for a in range(3) for _ in range(30)}
        assert rewards <= {0.0, 1.0}
        assert isinstance(environment.knowledge.reward_prior, BetaBernoulliFamily)

    def test_prior_sampled_model_differs_from_agent_model(self, streams):
        config = synthetic_config(model_source=ModelSource.PRIOR_SAMPLE, schedule=StochasticSchedule(change_prob=0.1))
        environment = SyntheticEnvironment(config, 10, streams)
        knowledge = environment.knowledge
        assert not np.allclose(environment.model.values, knowledge.model.values)
        np.testing.assert_allclose(environment.transition.probs.sum(axis=1), 1.0)
        np.testing.assert_allclose(knowledge.transition.probs, knowledge.transition_prior.mean().probs)

    def test_grid_knowledge(self, streams):
        config = synthetic_config(model_source=ModelSource.GRID, grid_size=6)
        environment = SyntheticEnvironment(config, 10, streams)
        grid = environment.knowledge.reward_prior
        assert isinstance(grid, DiscreteGridFamily)
        assert grid.num_cells == 6
        assert any(model is environment.model for model in grid.models)

    def test_known_source_uses_scaled_dirichlet(self, streams):
        config = synthetic_config(schedule=StochasticSchedule(change_prob=0.05), dirichlet_scale=400.0)
        knowledge = SyntheticEnvironment(config, 10, streams).knowledge
        np.testing.assert_allclose(knowledge.transition_prior.alpha.sum(axis=1), 400.0)
        np.testing.assert_allclose(knowledge.transition.probs, TransitionMatrix.uniform_switching(2, 0.05).probs)


class TestSuperuserTransition:

    def test_rows_are_stochastic(self, rng):
        phi = build_superuser_transition(rng.normal(size=(5, 3)), 0.01)
        np.testing.assert_allclose(phi.probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(phi.probs > 0)

    def test_full_mix_is_uniform_switching(self, rng):
        phi = build_superuser_transition(rng.normal(size=(4, 2)), 0.2, mix=1.0)
        np.testing.assert_allclose(phi.probs, TransitionMatrix.uniform_switching(4, 0.2).probs, atol=1e-12)

    def test_nearer_states_are_likelier(self):
        vectors = np.array([[0.0, 0.0], [0.5, 0.0], [3.0, 0.0]])
        phi = build_superuser_transition(vectors, 0.01, mix=0.0)
        assert phi.probs[0, 1] > phi.probs[0, 2]

    def test_entries_mix_switching_and_kernel(self):
        vectors = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        sq_dist = np.array([[0.0, 1.0, 4.0], [1.0, 0.0, 5.0], [4.0, 5.0, 0.0]])
        phi = build_superuser_transition(vectors, 0.01, mix=0.3)
        for s in range(3):
            kernel = np.exp(-sq_dist[s]) / np.exp(-sq_dist[s]).sum()
            for s_next in range(3):
                switching = 0.99 if s == s_next else 0.005
                assert phi.probs[s, s_next] == pytest.approx(0.3 * switching + 0.7 * kernel[s_next], rel=1e-12)


class TestMovieContext:

    def test_not_enough_genres(self, rng):
        catalog = MovieCatalog(np.zeros((3, 2)), (("a",), ("b",), ("a",)))
        with pytest.raises(ConfigurationError) as excinfo:
            sample_movie_context(catalog, rng, arms_per_round=3)
        assert excinfo.value.code == "NOT_ENOUGH_GENRES"
        context = sample_movie_context(catalog, rng, arms_per_round=3, sampling=GenreSampling.WITH_REPLACEMENT)
        assert context.num_arms == 3

    def test_distinct_genres(self, superuser_data, rng):
        catalog = superuser_data.catalog
        for _ in range(50):
            context = sample_movie_context(catalog, rng, arms_per_round=4)
            genres = [catalog.genres[movie][0] for movie in context.item_ids]
            assert len(set(genres)) == 4
            np.testing.assert_allclose(context.arm_features, catalog.features[list(context.item_ids)])


class TestSuperuserEnvironment:

    def test_true_means_use_test_factors(self, superuser_config, superuser_data, streams):
        environment = SuperuserEnvironment(superuser_config, superuser_data, 30, streams)
        for t in range(1, 31):
            context = environment.observe_context(t)
            user = superuser_data.test_user_factors[environment.users[environment.state]]
            expected = superuser_data.test_movie_factors[list(context.item_ids)] @ user
            np.testing.assert_allclose(environment.true_means(context), expected)
            environment.advance(t)

    def test_one_user_per_cluster(self, superuser_config, superuser_data, streams):
        environment = SuperuserEnvironment(superuser_config, superuser_data, 10, streams)
        assert [superuser_data.test_clusters[u] for u in environment.users] == [0, 1]
        knowledge = environment.knowledge
        assert knowledge.feature_dim == 3
        assert knowledge.num_arms == 4
        assert isinstance(knowledge.reward_prior, GaussianLinearFamily)

    def test_requires_artifacts(self, superuser_config, streams):
        with pytest.raises(ConfigurationError):
            build_environment(superuser_config, 10, streams)
