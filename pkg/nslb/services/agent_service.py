# =============================================================================
# NSLB - AGENT SERVICE
# =============================================================================

"""
Model-based latent bandit agents.

Every agent follows the act -> update protocol: `act(context)` returns an arm
and `update(context, action, reward)` must follow with that same arm before the
next `act`. `reset()` clears learned statistics but keeps the random stream.
"""

import logging
import math
from abc import ABC, abstractmethod
from collections import deque
from typing import Callable, Deque, List, Optional, Tuple, Union

import numpy as np

from ..core.constants import (
    DEFAULT_NUM_PARTICLES,
    DEFAULT_RESAMPLE_FRACTION,
    EXACT_POSTERIOR_MAX_STATES,
    EXACT_POSTERIOR_MAX_T,
    ResamplingScheme,
)
from ..core.exceptions import AgentProtocolError, ConfigurationError, InstanceTooLargeError
from ..core.metrics import argmax_tiebreak
from ..core.types import BeliefVector, Context, DirichletCounts, MeanRewardModel, TransitionMatrix, sample_categorical
from .conjugate_service import DiscreteGridFamily, reward_log_likelihood
from .environment_service import EnvironmentKnowledge
from .inference_service import Observation, ParticleSet, exact_joint_posterior, filter_update_log

logger = logging.getLogger(__name__)


# =============================================================================
# AGENT INTERFACE
# =============================================================================

class Agent(ABC):
    """Policy mapping the history and the current context to an arm."""

    name = "agent"

    def __init__(self, knowledge: EnvironmentKnowledge, rng: np.random.Generator):
        self.knowledge = knowledge
        self.rng = rng
        self._pending: Optional[int] = None
        self.t = 0

    def act(self, context: Context) -> int:
        if self._pending is not None:
            raise AgentProtocolError("act() called twice without update()", code="UPDATE_WITHOUT_ACT")
        action = int(self._select(context))
        if not 0 <= action < context.num_arms:
            raise AgentProtocolError(f"{self.name} chose arm {action} of {context.num_arms}", code="ACTION_MISMATCH")
        self._pending = action
        return action

    def update(self, context: Context, action: int, reward: float) -> None:
        if self._pending is None:
            raise AgentProtocolError()
        if action != self._pending:
            raise AgentProtocolError(f"acted {self._pending}, got {action}", code="ACTION_MISMATCH")
        self._pending = None
        self.t += 1
        self._observe(context, action, float(reward))

    def reset(self) -> None:
        self._pending = None
        self.t = 0
        self._reset()

    @abstractmethod
    def _select(self, context: Context) -> int:
        """Choose an arm for `context`."""

    @abstractmethod
    def _observe(self, context: Context, action: int, reward: float) -> None:
        """Fold the observed round into the agent's statistics."""

    @abstractmethod
    def _reset(self) -> None:
        """Clear statistics."""


class OracleAgent(Agent):
    """Plays the arm with the highest true mean; needs the environment's true means."""

    name = "oracle"

    def __init__(self, knowledge, rng, true_means: Callable[[Context], np.ndarray]):
        super().__init__(knowledge, rng)
        self.true_means = true_means

    def _select(self, context):
        return argmax_tiebreak(self.true_means(context))

    def _observe(self, context, action, reward):
        pass

    def _reset(self):
        pass


# =============================================================================
# MODEL-BASED THOMPSON SAMPLING
# =============================================================================

def mts_act(belief: BeliefVector, model: MeanRewardModel, context: Context, rng: np.random.Generator) -> int:
    """Sample a latent state from the belief and play its greedy arm."""
    state = sample_categorical(belief.probs, rng)
    return argmax_tiebreak(model.means(context)[:, state])


class MTSAgent(Agent):
    """Thompson sampling over latent states with a known (or assumed) model."""

    name = "mts"

    def __init__(self, knowledge, rng):
        super().__init__(knowledge, rng)
        self.model = knowledge.model
        self.transition = knowledge.transition
        self._reset()

    def _reset(self):
        self.belief = self.knowledge.initial_belief

    def _select(self, context):
        return mts_act(self.belief, self.model, context, self.rng)

    def _observe(self, context, action, reward):
        log_lik = reward_log_likelihood(reward, self.model.means(context)[action],
                                        self.knowledge.noise, self.knowledge.sigma)
        self.belief, _ = filter_update_log(self.belief, self.transition, log_lik)


class UMTSExactAgent(Agent):
    """Thompson sampling from the exact joint posterior over (state, grid model).

    Enumerates latent trajectories every round, so it only runs on tiny
    instances with a discrete model grid.
    """

    name = "umts_exact"

    def __init__(self, knowledge, rng, transition_prior: Union[DirichletCounts, TransitionMatrix, None] = None):
        super().__init__(knowledge, rng)
        if not isinstance(knowledge.reward_prior, DiscreteGridFamily):
            raise ConfigurationError("umts_exact needs a discrete model grid prior", code="AGENT_ENV_MISMATCH")
        if knowledge.horizon - 1 > EXACT_POSTERIOR_MAX_T or knowledge.num_states > EXACT_POSTERIOR_MAX_STATES:
            raise InstanceTooLargeError(f"horizon {knowledge.horizon}, |S|={knowledge.num_states}")
        self.grid: DiscreteGridFamily = knowledge.reward_prior
        self.transition_prior = transition_prior if transition_prior is not None else knowledge.transition_prior
        self._reset()

    def _reset(self):
        self.history: List[Observation] = []

    def posterior(self) -> np.ndarray:
        return exact_joint_posterior(self.history, self.grid, self.transition_prior, self.knowledge.initial_belief)

    def _select(self, context):
        table = self.posterior()
        state, cell = divmod(sample_categorical(table.ravel(), self.rng), table.shape[1])
        return argmax_tiebreak(self.grid.models[cell].means(context)[:, state])

    def _observe(self, context, action, reward):
        self.history.append(Observation(action, context, reward))


class UMTSParticleAgent(Agent):
    """Thompson sampling with a particle filter over latent trajectories,
    Dirichlet transition posteriors and conjugate reward posteriors."""

    name = "umts_pf"

    def __init__(self, knowledge, rng, num_particles: int = DEFAULT_NUM_PARTICLES,
                 resample_fraction: float = DEFAULT_RESAMPLE_FRACTION,
                 scheme: ResamplingScheme = ResamplingScheme.MULTINOMIAL):
        super().__init__(knowledge, rng)
        self.particles = ParticleSet(knowledge.reward_prior, knowledge.transition_prior, num_particles,
                                     initial_belief=knowledge.initial_belief,
                                     resample_fraction=resample_fraction, scheme=scheme)

    def _reset(self):
        self.particles.reset()

    def _select(self, context):
        self.particles.propose(self.rng)
        return argmax_tiebreak(self.particles.weighted_mean_rewards(context))

    def _observe(self, context, action, reward):
        self.particles.observe(action, context, reward, self.rng)


# =============================================================================
# SLIDING-WINDOW MODEL-BASED UCB
# =============================================================================

def sw_window(horizon: int, num_states: int, segments: float, scale: float = 1.0) -> int:
    """Window length proportional to n^(2/3) sqrt(|S| log n / L)."""
    log_n = math.log(max(horizon, 2))
    return max(1, int(round(scale * horizon ** (2.0 / 3.0) * math.sqrt(num_states * log_n / max(segments, 1.0)))))


class SlidingWindowState:
    """Ring buffer of the last `window` (believed state, gap) pairs.

    N(s) counts window rounds played under believed state s and G(s) sums
    their gaps mu(A, X, s) - R, both maintained incrementally.
    """

    def __init__(self, window: int, num_states: int):
        self.window = window
        self.num_states = num_states
        self.reset()

    def reset(self) -> None:
        self.buffer: Deque[Tuple[int, float]] = deque()
        self.counts = np.zeros(self.num_states)
        self.gaps = np.zeros(self.num_states)

    def push(self, state: int, gap: float) -> None:
        self.buffer.append((state, gap))
        self.counts[state] += 1.0
        self.gaps[state] += gap
        if len(self.buffer) > self.window:
            old_state, old_gap = self.buffer.popleft()
            self.counts[old_state] -= 1.0
            self.gaps[old_state] -= old_gap

    def consistent_states(self, sigma: float, horizon: int) -> np.ndarray:
        threshold = sigma * np.sqrt(6.0 * self.counts * math.log(max(horizon, 2)))
        consistent = np.nonzero(self.gaps <= threshold)[0]
        if consistent.size == 0:
            logger.debug("Consistent set is empty; falling back to all states")
            return np.arange(self.num_states)
        return consistent


def swmucb_step(state: SlidingWindowState, means: np.ndarray, sigma: float, horizon: int) -> Tuple[int, int]:
    """Joint arg max of (K, |S|) `means` over consistent states and all arms.

    Ties go to the lowest state, then the lowest arm.
    """
    consistent = state.consistent_states(sigma, horizon)
    flat = argmax_tiebreak(means[:, consistent].T.ravel())
    row, action = divmod(flat, means.shape[0])
    return int(consistent[row]), int(action)


class SWMUCBAgent(Agent):
    """Sliding-window elimination of latent states inconsistent with recent rewards."""

    name = "sw_mucb"

    def __init__(self, knowledge, rng, window: Optional[int] = None, window_scale: float = 1.0,
                 segments: Optional[int] = None, epsilon: float = 0.0):
        super().__init__(knowledge, rng)
        if window is None:
            if segments is None:
                change_rate = 1.0 - float(np.mean(np.diag(knowledge.transition.probs)))
                segments = 1.0 + knowledge.horizon * change_rate
            window = sw_window(knowledge.horizon, knowledge.num_states, segments, window_scale)
        self.window = window
        self.epsilon = epsilon
        self.model = self._model()
        self.state = SlidingWindowState(window, knowledge.num_states)
        self._believed: Optional[int] = None

    def _model(self) -> MeanRewardModel:
        return self.knowledge.model

    def _reset(self):
        self.state.reset()
        self._believed = None

    def _select(self, context):
        self._believed, action = swmucb_step(self.state, self.model.means(context),
                                             self.knowledge.sigma, self.knowledge.horizon)
        return action

    def _observe(self, context, action, reward):
        mean = self.model.mean(action, context, self._believed)
        self.state.push(self._believed, mean - self.epsilon - reward)


class SWUMUCBAgent(SWMUCBAgent):
    """Sliding-window elimination using prior-integrated means and an epsilon-shifted gap."""

    name = "sw_umucb"

    def _model(self) -> MeanRewardModel:
        return self.knowledge.reward_prior.prior_mean_model()


def swumucb_step(state: SlidingWindowState, prior_means: np.ndarray, sigma: float, horizon: int) -> Tuple[int, int]:
    """Selection of the prior-mean variant; the epsilon shift enters through the stored gaps."""
    return swmucb_step(state, prior_means, sigma, horizon)
