# =============================================================================
# NSLB - CONJUGATE REWARD FAMILIES
# =============================================================================

"""
Conjugate reward prior families, vectorized over particles.

Each family keeps per-state natural-parameter accumulators (psi) and counts (m)
for N particles at once, samples reward parameters from their posteriors and
scores rewards under sampled parameters. Shapes use N for particles, K for arms,
S for latent states, d for feature dimension and G for grid cells.
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ..core.constants import ConjugateFamilyKind, ModelKind, RewardNoise
from ..core.exceptions import ConfigurationError, UsageError
from ..core.types import Context, MeanRewardModel

logger = logging.getLogger(__name__)

# Bernoulli means are clipped away from {0, 1} before taking logs
_BERNOULLI_EPS = 1e-12


def reward_log_likelihood(reward: float, means: np.ndarray, noise: RewardNoise, sigma: float) -> np.ndarray:
    """Log P(reward | mean) elementwise over `means`."""
    if noise == RewardNoise.GAUSSIAN:
        return stats.norm.logpdf(reward, loc=means, scale=sigma)
    probs = np.clip(means, _BERNOULLI_EPS, 1.0 - _BERNOULLI_EPS)
    return stats.bernoulli.logpmf(int(round(reward)), probs)


def gaussian_posterior(prior_mean, prior_var, noise_var, total, count) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of a Gaussian mean with known noise variance."""
    precision_scale = prior_var * count + noise_var
    mean = (prior_var * total + noise_var * prior_mean) / precision_scale
    var = prior_var * noise_var / precision_scale
    return mean, var


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of an (N, S) probability matrix."""
    cumulative = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cumulative[:, -1]
    index = (cumulative <= u[:, None]).sum(axis=1)
    return np.minimum(index, probs.shape[1] - 1)


def sample_dirichlet_rows(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One Dirichlet draw per row of a positive (N, S) parameter matrix."""
    gammas = rng.standard_gamma(alpha)
    totals = gammas.sum(axis=1, keepdims=True)
    # Tiny concentrations can underflow every coordinate; fall back to the mean
    degenerate = totals[:, 0] <= 0
    if np.any(degenerate):
        gammas[degenerate] = alpha[degenerate]
        totals[degenerate] = alpha[degenerate].sum(axis=1, keepdims=True)
    return gammas / totals


# =============================================================================
# STATISTICS CONTAINER
# =============================================================================

class RewardStats:
    """Per-particle sufficient statistics; every array is indexed by particle first."""

    def __init__(self, arrays: Dict[str, np.ndarray]):
        self.arrays = arrays

    @property
    def psi(self) -> np.ndarray:
        return self.arrays["psi"]

    @property
    def m(self) -> np.ndarray:
        return self.arrays["m"]

    @property
    def num_particles(self) -> int:
        return self.arrays["psi"].shape[0]

    def take(self, indices: np.ndarray) -> "RewardStats":
        return RewardStats({name: array[indices].copy() for name, array in self.arrays.items()})

    def particle(self, index: int) -> Dict[str, np.ndarray]:
        return {name: array[index].copy() for name, array in self.arrays.items()}


# =============================================================================
# FAMILY INTERFACE
# =============================================================================

class ConjugateFamily(ABC):
    """Prior over per-state reward parameters with closed-form posterior updates."""

    kind: ConjugateFamilyKind

    def __init__(self, num_states: int):
        self.num_states = num_states

    @abstractmethod
    def initial_stats(self, num_particles: int) -> RewardStats:
        """Statistics of N particles that have seen no data."""

    @abstractmethod
    def sample_theta(self, reward_stats: RewardStats, rng: np.random.Generator) -> np.ndarray:
        """Draw one full parameter per particle from its posterior."""

    @abstractmethod
    def means(self, theta: np.ndarray, context: Context) -> np.ndarray:
        """(N, K, S) mean rewards under sampled parameters."""

    @abstractmethod
    def log_likelihood(self, theta: np.ndarray, action: int, context: Context, reward: float) -> np.ndarray:
        """(N, S) log-likelihood of `reward` in each state under sampled parameters."""

    @abstractmethod
    def update(self, reward_stats: RewardStats, states: np.ndarray, action: int,
               context: Context, reward: float) -> None:
        """Fold one observation into each particle's statistics at its state."""

    @abstractmethod
    def prior_mean_model(self) -> MeanRewardModel:
        """Prior-integrated mean reward model."""

    @abstractmethod
    def sample_state(self, reward_stats: RewardStats, state: int, rng: np.random.Generator) -> np.ndarray:
        """Posterior draw of the parameters of one state, one per particle."""


def conjugate_posterior_sample(family: ConjugateFamily, reward_stats: RewardStats, state: int,
                               rng: np.random.Generator) -> np.ndarray:
    """Sample the reward parameter of `state` for every particle."""
    if not 0 <= state < family.num_states:
        raise UsageError(f"state {state} out of range", code="BAD_CONFIG")
    return family.sample_state(reward_stats, state, rng)


# =============================================================================
# TABULAR FAMILIES
# =============================================================================

class GaussianTabularFamily(ConjugateFamily):
    """Independent Gaussian prior on every (arm, state) mean; Gaussian noise."""

    kind = ConjugateFamilyKind.GAUSSIAN_TABULAR

    def __init__(self, prior_mean, prior_std, noise_std: float):
        prior_mean = np.asarray(prior_mean, dtype=float)
        super().__init__(prior_mean.shape[1])
        self.prior_mean = prior_mean
        self.prior_var = np.broadcast_to(np.asarray(prior_std, dtype=float) ** 2, prior_mean.shape)
        self.noise_std = float(noise_std)
        self.num_arms = prior_mean.shape[0]

    def initial_stats(self, num_particles: int) -> RewardStats:
        shape = (num_particles,) + self.prior_mean.shape
        return RewardStats({"psi": np.zeros(shape), "m": np.zeros(shape)})

    def posterior(self, reward_stats: RewardStats) -> Tuple[np.ndarray, np.ndarray]:
        return gaussian_posterior(self.prior_mean, self.prior_var, self.noise_std ** 2,
                                  reward_stats.psi, reward_stats.m)

    def sample_theta(self, reward_stats, rng):
        mean, var = self.posterior(reward_stats)
        return mean + np.sqrt(var) * rng.standard_normal(mean.shape)

    def sample_state(self, reward_stats, state, rng):
        mean, var = self.posterior(reward_stats)
        mean, var = mean[:, :, state], var[:, :, state]
        return mean + np.sqrt(var) * rng.standard_normal(mean.shape)

    def means(self, theta, context):
        if context.num_arms != self.num_arms:
            raise UsageError("context arm count does not match the prior", code="AGENT_ENV_MISMATCH")
        return theta

    def log_likelihood(self, theta, action, context, reward):
        return stats.norm.logpdf(reward, loc=theta[:, action, :], scale=self.noise_std)

    def update(self, reward_stats, states, action, context, reward):
        rows = np.arange(reward_stats.num_particles)
        reward_stats.psi[rows, action, states] += reward
        reward_stats.m[rows, action, states] += 1.0

    def prior_mean_model(self):
        return MeanRewardModel.tabular(self.prior_mean)


class BetaBernoulliFamily(ConjugateFamily):
    """Beta prior on every (arm, state) success probability; Bernoulli rewards."""

    kind = ConjugateFamilyKind.BETA_BERNOULLI

    def __init__(self, prior_a, prior_b):
        prior_a = np.asarray(prior_a, dtype=float)
        prior_b = np.broadcast_to(np.asarray(prior_b, dtype=float), prior_a.shape)
        if np.any(prior_a <= 0) or np.any(prior_b <= 0):
            raise ConfigurationError("Beta prior parameters must be positive")
        super().__init__(prior_a.shape[1])
        self.prior_a = prior_a
        self.prior_b = np.array(prior_b)
        self.num_arms = prior_a.shape[0]

    @classmethod
    def moment_matched(cls, prior_mean, prior_std) -> "BetaBernoulliFamily":
        """Beta prior with the given mean and (at most) the given standard deviation."""
        mean = np.clip(np.asarray(prior_mean, dtype=float), 1e-3, 1 - 1e-3)
        concentration = np.maximum(mean * (1 - mean) / float(prior_std) ** 2 - 1.0, 1e-3)
        return cls(mean * concentration, (1 - mean) * concentration)

    def initial_stats(self, num_particles):
        shape = (num_particles,) + self.prior_a.shape
        return RewardStats({"psi": np.zeros(shape), "m": np.zeros(shape)})

    def posterior(self, reward_stats):
        return self.prior_a + reward_stats.psi, self.prior_b + reward_stats.m - reward_stats.psi

    def sample_theta(self, reward_stats, rng):
        a, b = self.posterior(reward_stats)
        return rng.beta(a, b)

    def sample_state(self, reward_stats, state, rng):
        a, b = self.posterior(reward_stats)
        return rng.beta(a[:, :, state], b[:, :, state])

    def means(self, theta, context):
        if context.num_arms != self.num_arms:
            raise UsageError("context arm count does not match the prior", code="AGENT_ENV_MISMATCH")
        return theta

    def log_likelihood(self, theta, action, context, reward):
        return reward_log_likelihood(reward, theta[:, action, :], RewardNoise.BERNOULLI, 0.0)

    def update(self, reward_stats, states, action, context, reward):
        rows = np.arange(reward_stats.num_particles)
        reward_stats.psi[rows, action, states] += reward
        reward_stats.m[rows, action, states] += 1.0

    def prior_mean_model(self):
        return MeanRewardModel.tabular(self.prior_a / (self.prior_a + self.prior_b))


# =============================================================================
# LINEAR FAMILY
# =============================================================================

class GaussianLinearFamily(ConjugateFamily):
    """Gaussian prior on each state's weight vector; rewards x^T w plus Gaussian noise.

    psi accumulates sum(x r) and m accumulates sum(x x^T) per state. Posterior
    means and Cholesky factors are cached and refreshed only for the states that
    received data.
    """

    kind = ConjugateFamilyKind.GAUSSIAN_LINEAR

    def __init__(self, prior_means, prior_covs, noise_std: float):
        prior_means = np.asarray(prior_means, dtype=float)
        prior_covs = np.asarray(prior_covs, dtype=float)
        super().__init__(prior_means.shape[0])
        self.dim = prior_means.shape[1]
        self.prior_means = prior_means
        self.prior_covs = prior_covs
        self.noise_var = float(noise_std) ** 2
        self.noise_std = float(noise_std)
        self.prior_precisions = np.linalg.inv(prior_covs)
        self.prior_shift = np.einsum("sij,sj->si", self.prior_precisions, prior_means)
        self.prior_chol = np.linalg.cholesky(prior_covs)

    def initial_stats(self, num_particles):
        n, s, d = num_particles, self.num_states, self.dim
        return RewardStats({
            "psi": np.zeros((n, s, d)),
            "m": np.zeros((n, s, d, d)),
            "post_mean": np.broadcast_to(self.prior_means, (n, s, d)).copy(),
            "post_chol": np.broadcast_to(self.prior_chol, (n, s, d, d)).copy(),
        })

    def _refresh(self, reward_stats: RewardStats, rows: np.ndarray, states: np.ndarray) -> None:
        precision = self.prior_precisions[states] + reward_stats.m[rows, states] / self.noise_var
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        shift = self.prior_shift[states] + reward_stats.psi[rows, states] / self.noise_var
        reward_stats.arrays["post_mean"][rows, states] = np.einsum("nij,nj->ni", cov, shift)
        reward_stats.arrays["post_chol"][rows, states] = np.linalg.cholesky(cov)

    def sample_theta(self, reward_stats, rng):
        z = rng.standard_normal(reward_stats.arrays["post_mean"].shape)
        return reward_stats.arrays["post_mean"] + np.einsum("nsij,nsj->nsi", reward_stats.arrays["post_chol"], z)

    def sample_state(self, reward_stats, state, rng):
        mean = reward_stats.arrays["post_mean"][:, state]
        chol = reward_stats.arrays["post_chol"][:, state]
        return mean + np.einsum("nij,nj->ni", chol, rng.standard_normal(mean.shape))

    def means(self, theta, context):
        if context.feature_dim != self.dim:
            raise UsageError("context feature dimension does not match the prior", code="AGENT_ENV_MISMATCH")
        return np.einsum("nsd,kd->nks", theta, context.arm_features)

    def log_likelihood(self, theta, action, context, reward):
        mu = theta @ context.arm_features[action]
        return stats.norm.logpdf(reward, loc=mu, scale=self.noise_std)

    def update(self, reward_stats, states, action, context, reward):
        x = context.arm_features[action]
        rows = np.arange(reward_stats.num_particles)
        reward_stats.psi[rows, states] += x * reward
        reward_stats.m[rows, states] += np.outer(x, x)
        self._refresh(reward_stats, rows, states)

    def prior_mean_model(self):
        return MeanRewardModel.linear(self.prior_means)


# =============================================================================
# DISCRETE GRID FAMILY
# =============================================================================

class DiscreteGridFamily(ConjugateFamily):
    """Finite set of candidate mean reward models with prior weights.

    The parameter of a particle is a cell index; psi holds the accumulated
    log-likelihood of its observations under every cell.
    """

    kind = ConjugateFamilyKind.DISCRETE_GRID

    def __init__(self, models: Sequence[MeanRewardModel], prior_weights=None,
                 noise: RewardNoise = RewardNoise.GAUSSIAN, noise_std: float = 0.5):
        if not models:
            raise ConfigurationError("grid needs at least one model")
        super().__init__(models[0].num_states)
        self.models = list(models)
        self.num_cells = len(self.models)
        weights = np.full(self.num_cells, 1.0 / self.num_cells) if prior_weights is None \
            else np.asarray(prior_weights, dtype=float)
        self.log_prior = np.log(weights / weights.sum())
        self.noise = RewardNoise(noise)
        self.noise_std = float(noise_std)

    def cell_means(self, context: Context) -> np.ndarray:
        """(G, K, S) mean rewards of every grid cell."""
        return np.stack([model.means(context) for model in self.models])

    def cell_log_likelihoods(self, action: int, context: Context, reward: float) -> np.ndarray:
        """(G, S) log-likelihood of `reward` under every cell and state."""
        means = np.array([[model.mean(action, context, s) for s in range(self.num_states)]
                          for model in self.models])
        return reward_log_likelihood(reward, means, self.noise, self.noise_std)

    def initial_stats(self, num_particles):
        return RewardStats({
            "psi": np.zeros((num_particles, self.num_cells)),
            "m": np.zeros((num_particles, self.num_states)),
        })

    def cell_posterior(self, reward_stats: RewardStats) -> np.ndarray:
        logits = self.log_prior + reward_stats.psi
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))

    def sample_theta(self, reward_stats, rng):
        return sample_rows(self.cell_posterior(reward_stats), rng)

    def sample_state(self, reward_stats, state, rng):
        cells = self.sample_theta(reward_stats, rng)
        values = np.stack([model.values for model in self.models])[cells]
        if self.models[0].kind == ModelKind.TABULAR:
            return values[:, :, state]
        return values[:, state]

    def means(self, theta, context):
        return self.cell_means(context)[theta]

    def log_likelihood(self, theta, action, context, reward):
        return self.cell_log_likelihoods(action, context, reward)[theta]

    def update(self, reward_stats, states, action, context, reward):
        table = self.cell_log_likelihoods(action, context, reward)
        reward_stats.psi[...] += table[:, states].T
        reward_stats.m[np.arange(reward_stats.num_particles), states] += 1.0

    def prior_mean_model(self):
        weights = np.exp(self.log_prior)
        values = np.tensordot(weights, np.stack([model.values for model in self.models]), axes=1)
        return MeanRewardModel(self.models[0].kind, values)

