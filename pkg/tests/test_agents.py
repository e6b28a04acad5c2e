"""Model-based latent bandit agents."""

import logging

import numpy as np
import pytest

from nslb.api.schemas import StochasticSchedule
from nslb.core.constants import ModelSource
from nslb.core.exceptions import AgentProtocolError, ConfigurationError, InstanceTooLargeError
from nslb.core.types import BeliefVector, Context, MeanRewardModel
from nslb.services.agent_service import (
    MTSAgent,
    SlidingWindowState,
    SWMUCBAgent,
    SWUMUCBAgent,
    UMTSExactAgent,
    UMTSParticleAgent,
    mts_act,
    sw_window,
    swmucb_step,
)
from nslb.services.environment_service import SyntheticEnvironment
from nslb.services.experiment_service import make_streams, play

from .conftest import synthetic_config

STAY = StochasticSchedule(transition=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def _environment(horizon=50, seed=0, **overrides):
    return SyntheticEnvironment(synthetic_config(**overrides), horizon, make_streams(seed, 0))


class TestProtocol:

    def test_update_without_act(self, rng):
        agent = MTSAgent(_environment().knowledge, rng)
        with pytest.raises(AgentProtocolError) as excinfo:
            agent.update(Context.empty(3), 0, 1.0)
        assert excinfo.value.code == "UPDATE_WITHOUT_ACT"

    def test_act_twice(self, rng):
        agent = MTSAgent(_environment().knowledge, rng)
        agent.act(Context.empty(3))
        with pytest.raises(AgentProtocolError):
            agent.act(Context.empty(3))

    def test_update_with_other_action(self, rng):
        agent = MTSAgent(_environment().knowledge, rng)
        action = agent.act(Context.empty(3))
        with pytest.raises(AgentProtocolError) as excinfo:
            agent.update(Context.empty(3), (action + 1) % 3, 1.0)
        assert excinfo.value.code == "ACTION_MISMATCH"

    def test_reset_clears_pending_action(self, rng):
        agent = MTSAgent(_environment().knowledge, rng)
        agent.act(Context.empty(3))
        agent.reset()
        assert agent.t == 0
        agent.act(Context.empty(3))


class TestMTS:

    def test_single_state_plays_best_arm(self, rng):
        environment = _environment(horizon=100, num_states=1, means=[[0.1], [0.9], [0.5]])
        agent = MTSAgent(environment.knowledge, rng)
        records = play(environment, agent, 100)
        assert {record.action for record in records} == {1}

    def test_belief_concentrates_on_true_state(self, rng):
        means = np.eye(3).tolist()
        environment = _environment(horizon=100, num_states=3, means=means, schedule=STAY)
        agent = MTSAgent(environment.knowledge, rng)
        play(environment, agent, 100)
        assert agent.belief.probs[environment.state] > 0.99

    def test_action_frequencies_follow_belief(self, rng):
        belief = BeliefVector(np.array([0.2, 0.3, 0.5]))
        model = MeanRewardModel.tabular(np.eye(3))
        actions = [mts_act(belief, model, Context.empty(3), rng) for _ in range(30_000)]
        np.testing.assert_allclose(np.bincount(actions, minlength=3) / 30_000, belief.probs, atol=0.015)


class TestUMTS:

    def test_exact_needs_grid(self, rng):
        with pytest.raises(ConfigurationError) as excinfo:
            UMTSExactAgent(_environment(horizon=8).knowledge, rng)
        assert excinfo.value.code == "AGENT_ENV_MISMATCH"

    def test_exact_refuses_long_horizons(self, rng):
        environment = _environment(horizon=40, model_source=ModelSource.GRID, grid_size=3)
        with pytest.raises(InstanceTooLargeError):
            UMTSExactAgent(environment.knowledge, rng)

    def test_exact_runs_on_small_grid(self, rng):
        environment = _environment(horizon=8, num_arms=2, model_source=ModelSource.GRID, grid_size=3,
                                   schedule=StochasticSchedule(change_prob=0.1))
        agent = UMTSExactAgent(environment.knowledge, rng)
        records = play(environment, agent, 8)
        assert len(agent.history) == 8
        table = agent.posterior()
        assert table.shape == (2, 3)
        assert table.sum() == pytest.approx(1.0)
        assert all(0 <= record.action < 2 for record in records)

    def test_particle_agent_keeps_normalized_weights(self, rng):
        environment = _environment(horizon=40, schedule=StochasticSchedule(change_prob=0.05),
                                   model_source=ModelSource.PRIOR_SAMPLE)
        agent = UMTSParticleAgent(environment.knowledge, rng, num_particles=50)
        play(environment, agent, 40)
        particles = agent.particles
        assert particles.weights.sum() == pytest.approx(1.0)
        assert particles.state_marginal().sum() == pytest.approx(1.0)
        assert (particles.counts - particles.prior_counts).sum() == pytest.approx(50 * 39)


class TestSlidingWindow:

    def test_window_formula(self):
        assert sw_window(1000, 5, 5) == 263
        assert sw_window(1000, 5, 5, scale=0.25) == 66
        assert sw_window(1, 1, 1, scale=1e-6) == 1

    def test_eviction(self):
        state = SlidingWindowState(2, 2)
        for believed, gap in ((0, 1.0), (1, 0.5), (0, 2.0)):
            state.push(believed, gap)
        np.testing.assert_allclose(state.counts, [1.0, 1.0])
        np.testing.assert_allclose(state.gaps, [2.0, 0.5])

    def test_empty_consistent_set_falls_back(self, caplog):
        state = SlidingWindowState(10, 2)
        state.push(0, 10.0)
        state.push(1, 10.0)
        with caplog.at_level(logging.DEBUG, logger="nslb.services.agent_service"):
            consistent = state.consistent_states(0.1, 100)
        assert consistent.tolist() == [0, 1]
        assert "falling back" in caplog.text

    def test_joint_argmax_tie_breaking(self):
        state = SlidingWindowState(10, 2)
        assert swmucb_step(state, np.array([[1.0, 1.0], [0.0, 0.0]]), 0.5, 100) == (0, 0)
        assert swmucb_step(state, np.array([[0.0, 1.0], [0.5, 1.0]]), 0.5, 100) == (1, 0)

    def test_inconsistent_state_is_eliminated(self, rng):
        environment = _environment(horizon=1000, num_arms=2, means=[[0.9, 0.1], [0.1, 0.9]],
                                   schedule=StochasticSchedule(transition=[[1.0, 0.0], [0.0, 1.0]]))
        agent = SWMUCBAgent(environment.knowledge, rng, window=1000)
        records = play(environment, agent, 1000)
        best = environment.state
        tail = [record.action for record in records[-200:]]
        assert sum(action == best for action in tail) >= 190

    def test_prior_mean_variant_shifts_gaps(self, rng):
        environment = _environment(horizon=100, model_source=ModelSource.PRIOR_SAMPLE)
        agent = SWUMUCBAgent(environment.knowledge, rng, window=20, epsilon=0.1)
        np.testing.assert_allclose(agent.model.values, environment.knowledge.reward_prior.prior_mean_model().values)
        context = Context.empty(3)
        action = agent.act(context)
        agent.update(context, action, 0.0)
        believed = agent._believed
        assert agent.state.gaps[believed] == pytest.approx(agent.model.values[action, believed] - 0.1)
