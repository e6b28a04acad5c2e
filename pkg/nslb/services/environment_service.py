# =============================================================================
# NSLB - ENVIRONMENT SERVICE
# =============================================================================

"""
Environment generators for latent bandit experiments.

Every environment owns three random streams (latent, context, reward) so that
agents replaying the same run face identical latent sequences, contexts and
reward noise. Each round the runner asks for a context, the true mean rewards,
pulls the chosen arm and then advances the latent state.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from ..api.schemas import (
    FixedPeriodSchedule,
    StochasticSchedule,
    SuperuserEnvConfig,
    SyntheticEnvConfig,
)
from ..core.constants import (
    ARMS_PER_ROUND,
    SUPERUSER_MIX,
    GenreSampling,
    ModelSource,
    RewardNoise,
)
from ..core.exceptions import ConfigurationError
from ..core.types import (
    BeliefVector,
    Context,
    DirichletCounts,
    MeanRewardModel,
    TransitionMatrix,
    sample_categorical,
)
from .conjugate_service import (
    BetaBernoulliFamily,
    ConjugateFamily,
    DiscreteGridFamily,
    GaussianLinearFamily,
    GaussianTabularFamily,
)

logger = logging.getLogger(__name__)


@dataclass
class EnvironmentStreams:
    """Independent generators for latent draws, contexts and reward noise."""
    latent: np.random.Generator
    context: np.random.Generator
    reward: np.random.Generator


@dataclass(frozen=True)
class EnvironmentKnowledge:
    """What agents are told about an environment.

    `model` and `transition` are the point estimates used by model-based agents
    that assume a known model; `reward_prior` and `transition_prior` are used by
    agents that account for model uncertainty.
    """
    num_arms: int
    num_states: int
    feature_dim: int
    horizon: int
    sigma: float
    noise: RewardNoise
    model: MeanRewardModel
    transition: TransitionMatrix
    reward_prior: ConjugateFamily
    transition_prior: DirichletCounts
    initial_belief: BeliefVector
    reward_range: Tuple[float, float]

    @property
    def contextual(self) -> bool:
        return self.feature_dim > 0


# =============================================================================
# PRIMITIVES
# =============================================================================

def sample_synthetic_means(rng: np.random.Generator, num_arms: int, num_states: int) -> MeanRewardModel:
    """Mean table with every entry drawn from Uniform(0, 1)."""
    return MeanRewardModel.tabular(rng.uniform(0.0, 1.0, size=(num_arms, num_states)))


def step_latent(current: int, schedule: Union[FixedPeriodSchedule, StochasticSchedule, TransitionMatrix],
                t: int, rng: np.random.Generator, num_states: Optional[int] = None) -> int:
    """Latent state for round t + 1 given the state at round t."""
    if isinstance(schedule, FixedPeriodSchedule):
        if num_states is None:
            raise ConfigurationError("fixed-period schedule needs the number of states")
        return (current + 1) % num_states if t % schedule.period == 0 else current
    transition = schedule if isinstance(schedule, TransitionMatrix) else schedule_transition(schedule, num_states)
    return sample_categorical(transition.row(current), rng)


def schedule_transition(schedule: StochasticSchedule, num_states: int) -> TransitionMatrix:
    if schedule.transition is not None:
        return TransitionMatrix(np.asarray(schedule.transition, dtype=float))
    return TransitionMatrix.uniform_switching(num_states, schedule.change_prob)


def emit_reward(model: MeanRewardModel, action: int, context: Context, state: int, sigma: float,
                rng: np.random.Generator, noise: RewardNoise = RewardNoise.GAUSSIAN) -> float:
    """Draw a reward around mu(a, x, s); consumes exactly one draw from `rng`."""
    return noisy_reward(model.mean(action, context, state), sigma, rng, noise)


def noisy_reward(mean: float, sigma: float, rng: np.random.Generator,
                 noise: RewardNoise = RewardNoise.GAUSSIAN) -> float:
    if noise == RewardNoise.BERNOULLI:
        return float(rng.random() < mean)
    return float(mean + sigma * rng.standard_normal())


def build_superuser_transition(state_vectors, change_prob: float, mix: float = SUPERUSER_MIX) -> TransitionMatrix:
    """mix * uniform switching + (1 - mix) * similarity kernel.

    The kernel row of state s is proportional to exp(-||u_s' - u_s||^2), so
    transitions to nearby states are more likely.
    """
    vectors = np.asarray(state_vectors, dtype=float)
    num_states = vectors.shape[0]
    switching = TransitionMatrix.uniform_switching(num_states, change_prob).probs
    sq_dist = ((vectors[:, None, :] - vectors[None, :, :]) ** 2).sum(axis=2)
    kernel = np.exp(-sq_dist - logsumexp(-sq_dist, axis=1, keepdims=True))
    return TransitionMatrix.normalized(mix * switching + (1.0 - mix) * kernel)


# =============================================================================
# MOVIE CATALOG
# =============================================================================

@dataclass(frozen=True)
class MovieCatalog:
    """Movie feature rows with their genre labels."""
    features: np.ndarray
    genres: Tuple[Tuple[str, ...], ...]
    movie_ids: Optional[Tuple[int, ...]] = None

    def genre_index(self) -> Dict[str, np.ndarray]:
        index: Dict[str, List[int]] = {}
        for movie, labels in enumerate(self.genres):
            for label in labels:
                index.setdefault(label, []).append(movie)
        return {label: np.array(index[label]) for label in sorted(index)}


def sample_movie_context(catalog: MovieCatalog, rng: np.random.Generator,
                         arms_per_round: int = ARMS_PER_ROUND,
                         sampling: GenreSampling = GenreSampling.WITHOUT_REPLACEMENT,
                         genre_index: Optional[Dict[str, np.ndarray]] = None,
                         features: Optional[np.ndarray] = None) -> Context:
    """Sample genres uniformly, then one movie uniformly within each genre.

    `features` overrides the catalog's feature rows (e.g. training-split factors).
    """
    genre_index = genre_index if genre_index is not None else catalog.genre_index()
    labels = list(genre_index)
    if sampling == GenreSampling.WITHOUT_REPLACEMENT:
        if len(labels) < arms_per_round:
            raise ConfigurationError(f"{len(labels)} genres for {arms_per_round} arms", code="NOT_ENOUGH_GENRES")
        chosen = rng.choice(len(labels), size=arms_per_round, replace=False)
    else:
        chosen = rng.integers(0, len(labels), size=arms_per_round)
    movies = [int(genre_index[labels[g]][rng.integers(0, len(genre_index[labels[g]]))]) for g in chosen]
    rows = catalog.features if features is None else features
    return Context(rows[movies], item_ids=tuple(movies))


# =============================================================================
# ENVIRONMENTS
# =============================================================================

class Environment(ABC):
    """A non-stationary latent bandit seen one round at a time."""

    name: str

    def __init__(self, horizon: int, streams: EnvironmentStreams):
        self.horizon = horizon
        self.streams = streams
        self.state = 0

    @property
    @abstractmethod
    def knowledge(self) -> EnvironmentKnowledge:
        """Information handed to agents."""

    @abstractmethod
    def observe_context(self, t: int) -> Context:
        """Context of round t."""

    @abstractmethod
    def true_means(self, context: Context) -> np.ndarray:
        """Mean reward of every arm in the current latent state."""

    @abstractmethod
    def advance(self, t: int) -> int:
        """Move to the latent state of round t + 1."""

    @abstractmethod
    def pull(self, action: int, context: Context) -> float:
        """Reward of `action`; consumes one reward draw whatever the action."""


class SyntheticEnvironment(Environment):
    """Context-free Gaussian or Bernoulli bandit with a K x |S| mean table."""

    name = "synthetic"

    def __init__(self, config: SyntheticEnvConfig, horizon: int, streams: EnvironmentStreams):
        super().__init__(horizon, streams)
        self.config = config
        self.num_arms = config.num_arms
        self.num_states = config.num_states
        self.schedule = config.schedule
        rng = streams.latent

        base = MeanRewardModel.tabular(config.means) if config.means is not None \
            else sample_synthetic_means(rng, config.num_arms, config.num_states)
        if isinstance(self.schedule, FixedPeriodSchedule):
            nominal = TransitionMatrix.uniform_switching(self.num_states, 1.0 / self.schedule.period)
        else:
            nominal = schedule_transition(self.schedule, self.num_states)

        alpha_diag = DirichletCounts.diagonal(self.num_states, config.dirichlet_self, config.dirichlet_other)
        source = config.model_source
        self.grid: Optional[DiscreteGridFamily] = None
        if source == ModelSource.KNOWN:
            self.model = base
            self.transition = nominal
            agent_transition = nominal
            transition_prior = DirichletCounts.from_transition(nominal, config.dirichlet_scale) \
                if np.all(nominal.probs > 0) else alpha_diag
            reward_prior = self._tabular_prior(base.values)
        elif source == ModelSource.PRIOR_SAMPLE:
            self.model = MeanRewardModel.tabular(self._perturb(base.values, rng))
            if isinstance(self.schedule, StochasticSchedule):
                gammas = rng.standard_gamma(alpha_diag.alpha)
                self.transition = TransitionMatrix.normalized(gammas)
            else:
                self.transition = nominal
            transition_prior = alpha_diag
            agent_transition = alpha_diag.mean()
            reward_prior = self._tabular_prior(base.values)
        else:
            cells = [MeanRewardModel.tabular(self._perturb(base.values, rng)) for _ in range(config.grid_size)]
            self.model = cells[int(rng.integers(0, len(cells)))]
            self.transition = nominal
            transition_prior = alpha_diag
            agent_transition = alpha_diag.mean()
            reward_prior = DiscreteGridFamily(cells, noise=config.noise, noise_std=config.sigma)
            self.grid = reward_prior

        self._context = Context.empty(self.num_arms)
        self.state = int(rng.integers(0, self.num_states))
        self._knowledge = EnvironmentKnowledge(
            num_arms=self.num_arms,
            num_states=self.num_states,
            feature_dim=0,
            horizon=horizon,
            sigma=config.sigma,
            noise=config.noise,
            model=reward_prior.prior_mean_model() if source != ModelSource.KNOWN else base,
            transition=agent_transition,
            reward_prior=reward_prior,
            transition_prior=transition_prior,
            initial_belief=BeliefVector.uniform(self.num_states),
            reward_range=(0.0, 1.0),
        )
        logger.debug(f"Synthetic environment ready: K={self.num_arms}, |S|={self.num_states}, "
                     f"source={source.value}, initial state {self.state}")

    def _perturb(self, table: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        values = table + self.config.prior_std * rng.standard_normal(table.shape)
        if self.config.noise == RewardNoise.BERNOULLI:
            values = np.clip(values, 0.0, 1.0)
        return values

    def _tabular_prior(self, prior_mean: np.ndarray) -> ConjugateFamily:
        if self.config.noise == RewardNoise.BERNOULLI:
            return BetaBernoulliFamily.moment_matched(prior_mean, self.config.prior_std)
        return GaussianTabularFamily(prior_mean, self.config.prior_std, self.config.sigma)

    @property
    def knowledge(self) -> EnvironmentKnowledge:
        return self._knowledge

    def observe_context(self, t: int) -> Context:
        return self._context

    def true_means(self, context: Context) -> np.ndarray:
        return self.model.means(context)[:, self.state]

    def pull(self, action: int, context: Context) -> float:
        return emit_reward(self.model, action, context, self.state, self.config.sigma,
                           self.streams.reward, self.config.noise)

    def advance(self, t: int) -> int:
        if isinstance(self.schedule, FixedPeriodSchedule):
            self.state = step_latent(self.state, self.schedule, t, self.streams.latent, self.num_states)
        else:
            self.state = step_latent(self.state, self.transition, t, self.streams.latent)
        return self.state


@dataclass(frozen=True)
class SuperuserData:
    """Arrays the superuser environment is assembled from.

    Train factors feed the agents (context rows and prior); test factors
    generate rewards. `test_clusters[u]` is the cluster of user u, or -1 when
    the user has no test ratings.
    """
    catalog: MovieCatalog
    train_movie_factors: np.ndarray
    test_movie_factors: np.ndarray
    test_user_factors: np.ndarray
    test_clusters: np.ndarray
    prior_means: np.ndarray
    prior_covs: np.ndarray
    prior_transition: TransitionMatrix
    prior_alpha: DirichletCounts


class SuperuserEnvironment(Environment):
    """Linear contextual environment switching among one real test user per cluster."""

    name = "superuser"

    def __init__(self, config: SuperuserEnvConfig, data: SuperuserData, horizon: int,
                 streams: EnvironmentStreams):
        super().__init__(horizon, streams)
        self.config = config
        self.data = data
        self.sigma = float(np.sqrt(config.reward_variance))
        self.num_states = data.prior_means.shape[0]

        rng = streams.latent
        users = []
        for cluster in range(self.num_states):
            members = np.nonzero(data.test_clusters == cluster)[0]
            if members.size == 0:
                raise ConfigurationError(f"no test user in cluster {cluster}")
            users.append(int(members[rng.integers(0, members.size)]))
        self.users = tuple(users)
        self.state_user_vectors = data.test_user_factors[users]
        self.transition = build_superuser_transition(self.state_user_vectors, config.change_prob, config.mix)
        self.state = int(rng.integers(0, self.num_states))
        self._genre_index = data.catalog.genre_index()

        ratings_scale = float(np.abs(data.test_movie_factors @ self.state_user_vectors.T).max())
        self._knowledge = EnvironmentKnowledge(
            num_arms=config.arms_per_round,
            num_states=self.num_states,
            feature_dim=data.train_movie_factors.shape[1],
            horizon=horizon,
            sigma=self.sigma,
            noise=RewardNoise.GAUSSIAN,
            model=MeanRewardModel.linear(data.prior_means),
            transition=data.prior_transition,
            reward_prior=GaussianLinearFamily(data.prior_means, data.prior_covs, self.sigma),
            transition_prior=data.prior_alpha,
            initial_belief=BeliefVector.uniform(self.num_states),
            reward_range=(-ratings_scale, ratings_scale),
        )
        logger.debug(f"Superuser environment ready: users {self.users}, initial state {self.state}")

    @property
    def knowledge(self) -> EnvironmentKnowledge:
        return self._knowledge

    def observe_context(self, t: int) -> Context:
        return sample_movie_context(self.data.catalog, self.streams.context, self.config.arms_per_round,
                                    self.config.genre_sampling, self._genre_index,
                                    features=self.data.train_movie_factors)

    def true_means(self, context: Context) -> np.ndarray:
        movies = np.asarray(context.item_ids, dtype=int)
        return self.data.test_movie_factors[movies] @ self.state_user_vectors[self.state]

    def pull(self, action: int, context: Context) -> float:
        return noisy_reward(float(self.true_means(context)[action]), self.sigma, self.streams.reward)

    def advance(self, t: int) -> int:
        self.state = step_latent(self.state, self.transition, t, self.streams.latent)
        return self.state


def build_environment(config: Union[SyntheticEnvConfig, SuperuserEnvConfig], horizon: int,
                      streams: EnvironmentStreams, superuser_data: Optional[SuperuserData] = None) -> Environment:
    """Construct the environment described by `config`."""
    if isinstance(config, SyntheticEnvConfig):
        return SyntheticEnvironment(config, horizon, streams)
    if superuser_data is None:
        raise ConfigurationError("superuser environment needs offline artifacts")
    return SuperuserEnvironment(config, superuser_data, horizon, streams)

