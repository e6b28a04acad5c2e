# =============================================================================
# NSLB - INFERENCE SERVICE
# =============================================================================

"""
Bayesian machinery over latent states.

Forward filtering with a known transition matrix, the exact joint posterior over
the next latent state and a finite model grid (trajectory enumeration, desk-scale
only), and a particle filter that samples transition rows, latent states and
reward parameters from per-particle conjugate posteriors.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp

from ..core.constants import (
    DEFAULT_RESAMPLE_FRACTION,
    EXACT_POSTERIOR_MAX_STATES,
    EXACT_POSTERIOR_MAX_T,
    FLOAT_FORMAT,
    SNAPSHOT_CSV_HEADER,
    ResamplingScheme,
)
from ..core.exceptions import InstanceTooLargeError, NumericUnderflowError, UsageError
from ..core.types import BeliefVector, Context, DirichletCounts, TransitionMatrix
from .conjugate_service import (
    ConjugateFamily,
    DiscreteGridFamily,
    RewardStats,
    sample_dirichlet_rows,
    sample_rows,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    """One observed round: the acted arm, its context and the reward."""
    action: int
    context: Context
    reward: float


# =============================================================================
# FORWARD FILTERING
# =============================================================================

def filter_update(belief: BeliefVector, transition: TransitionMatrix,
                  likelihoods) -> Tuple[BeliefVector, float]:
    """One step of the forward filter.

    Returns the belief over the next latent state and the unnormalized mass,
    which is the predictive likelihood of the observation.
    """
    likelihoods = np.asarray(likelihoods, dtype=float)
    if np.any(likelihoods < 0) or not np.all(np.isfinite(likelihoods)):
        raise UsageError("likelihoods must be finite and non-negative", code="NEGATIVE_PROBABILITY")
    mass = (belief.probs * likelihoods) @ transition.probs
    total = float(mass.sum())
    if total <= 0.0:
        raise NumericUnderflowError()
    return BeliefVector(mass / total), total


def filter_update_log(belief: BeliefVector, transition: TransitionMatrix,
                      log_likelihoods) -> Tuple[BeliefVector, float]:
    """Log-space forward filter step with a max shift; returns the log predictive likelihood."""
    log_likelihoods = np.asarray(log_likelihoods, dtype=float)
    shift = float(np.max(log_likelihoods))
    if not np.isfinite(shift):
        raise NumericUnderflowError()
    with np.errstate(under="ignore"):
        weighted = belief.probs * np.exp(log_likelihoods - shift)
    mass = weighted @ transition.probs
    total = float(mass.sum())
    if total <= 0.0:
        raise NumericUnderflowError("belief has no mass where the observation is plausible")
    return BeliefVector(mass / total), float(np.log(total) + shift)


def forward_filter(initial: BeliefVector, transition: TransitionMatrix, log_likelihood_rows) -> np.ndarray:
    """Run the filter over a (t, S) matrix of log-likelihoods; returns the (t + 1, S) beliefs."""
    beliefs = [initial.probs]
    belief = initial
    for row in np.asarray(log_likelihood_rows, dtype=float):
        belief, _ = filter_update_log(belief, transition, row)
        beliefs.append(belief.probs)
    return np.vstack(beliefs)


# =============================================================================
# EXACT JOINT POSTERIOR
# =============================================================================

def _trajectory_transition_log_prob(trajectories: np.ndarray,
                                    transition_prior: Union[DirichletCounts, TransitionMatrix]) -> np.ndarray:
    num_states = transition_prior.num_states
    if trajectories.shape[1] < 2:
        return np.zeros(trajectories.shape[0])
    if isinstance(transition_prior, TransitionMatrix):
        with np.errstate(divide="ignore"):
            log_phi = np.log(transition_prior.probs)
        return log_phi[trajectories[:, :-1], trajectories[:, 1:]].sum(axis=1)

    # Dirichlet-multinomial marginal of the transition counts of each trajectory
    flat = trajectories[:, :-1] * num_states + trajectories[:, 1:]
    counts = np.zeros((trajectories.shape[0], num_states * num_states))
    np.add.at(counts, (np.arange(trajectories.shape[0])[:, None], flat), 1.0)
    counts = counts.reshape(-1, num_states, num_states)
    alpha = transition_prior.alpha
    row_alpha = alpha.sum(axis=1)
    per_row = gammaln(row_alpha) - gammaln(row_alpha + counts.sum(axis=2))
    per_cell = gammaln(alpha + counts) - gammaln(alpha)
    return per_row.sum(axis=1) + per_cell.sum(axis=(1, 2))


def exact_joint_posterior(history: Sequence[Observation], family: DiscreteGridFamily,
                          transition_prior: Union[DirichletCounts, TransitionMatrix],
                          initial_belief: Optional[BeliefVector] = None) -> np.ndarray:
    """Joint posterior over (next latent state, grid cell) after `history`.

    Sums over every latent trajectory of length t + 1, marginalizing the
    transition matrix analytically when a Dirichlet prior is given. Rows index
    the state at round t + 1, columns the grid cells.
    """
    t = len(history)
    num_states = family.num_states
    if t > EXACT_POSTERIOR_MAX_T or num_states > EXACT_POSTERIOR_MAX_STATES:
        raise InstanceTooLargeError(f"t={t}, |S|={num_states}; limits are t <= {EXACT_POSTERIOR_MAX_T}, "
                                    f"|S| <= {EXACT_POSTERIOR_MAX_STATES}")
    if transition_prior.num_states != num_states:
        raise UsageError("transition prior and grid disagree on |S|", code="BAD_CONFIG")
    initial = initial_belief or BeliefVector.uniform(num_states)

    trajectories = np.stack(np.unravel_index(np.arange(num_states ** (t + 1)), (num_states,) * (t + 1)), axis=1)
    with np.errstate(divide="ignore"):
        log_joint = np.log(initial.probs)[trajectories[:, 0]]
    log_joint = log_joint + _trajectory_transition_log_prob(trajectories, transition_prior)

    log_cells = np.broadcast_to(family.log_prior, (trajectories.shape[0], family.num_cells)).copy()
    for tau, observation in enumerate(history):
        table = family.cell_log_likelihoods(observation.action, observation.context, observation.reward)
        log_cells += table[:, trajectories[:, tau]].T
    log_joint = log_joint[:, None] + log_cells

    result = np.full((num_states, family.num_cells), -np.inf)
    for state in range(num_states):
        members = trajectories[:, t] == state
        result[state] = logsumexp(log_joint[members], axis=0)
    total = logsumexp(result)
    if not np.isfinite(total):
        raise NumericUnderflowError("history has zero probability under the prior")
    return np.exp(result - total)


# =============================================================================
# PARTICLE FILTER
# =============================================================================

def effective_sample_size(weights) -> float:
    weights = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(weights, weights))


def resample_indices(weights: np.ndarray, rng: np.random.Generator,
                     scheme: ResamplingScheme = ResamplingScheme.MULTINOMIAL) -> np.ndarray:
    """Indices of the particles kept by one resampling step."""
    n = weights.size
    if ResamplingScheme(scheme) == ResamplingScheme.SYSTEMATIC:
        positions = (rng.random() + np.arange(n)) / n
        return np.minimum(np.searchsorted(np.cumsum(weights), positions, side="right"), n - 1)
    return rng.choice(n, size=n, replace=True, p=weights)


@dataclass
class Particle:
    """Copy of one particle's state."""
    current_state: int
    weight: float
    dirichlet: DirichletCounts
    reward_stats: Dict[str, np.ndarray]
    theta: Optional[np.ndarray]
    phi_row: Optional[np.ndarray]


class ParticleSet:
    """N weighted hypotheses of the latent trajectory, stored as parallel arrays.

    Each particle keeps its latest committed state, Dirichlet transition counts
    and conjugate reward statistics. A round is `propose` (sample a transition
    row, a state and reward parameters before acting) followed by
    `weight_update`, `commit` and `resample_if_needed` once the reward is seen.
    """

    def __init__(self, family: ConjugateFamily, transition_prior: DirichletCounts, num_particles: int,
                 initial_belief: Optional[BeliefVector] = None,
                 resample_fraction: float = DEFAULT_RESAMPLE_FRACTION,
                 scheme: ResamplingScheme = ResamplingScheme.MULTINOMIAL):
        if num_particles < 1:
            raise UsageError("need at least one particle", code="BAD_CONFIG")
        if transition_prior.num_states != family.num_states:
            raise UsageError("transition prior and reward prior disagree on |S|", code="BAD_CONFIG")
        self.family = family
        self.num_particles = num_particles
        self.num_states = family.num_states
        self.initial_belief = initial_belief or BeliefVector.uniform(self.num_states)
        self.resample_fraction = resample_fraction
        self.scheme = ResamplingScheme(scheme)
        self.prior_counts = np.array(transition_prior.alpha)
        self.resample_count = 0
        self.reset()

    def reset(self) -> None:
        n = self.num_particles
        self.states = np.full(n, -1, dtype=np.int64)
        self.counts = np.broadcast_to(self.prior_counts, (n, self.num_states, self.num_states)).copy()
        self.reward_stats: RewardStats = self.family.initial_stats(n)
        self.weights = np.full(n, 1.0 / n)
        self.phi_rows: Optional[np.ndarray] = None
        self.proposed_states: Optional[np.ndarray] = None
        self.theta: Optional[np.ndarray] = None
        self._log_likelihoods: Optional[np.ndarray] = None
        self._observation_key: Optional[tuple] = None

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def _transition_parameters(self) -> np.ndarray:
        rows = np.arange(self.num_particles)
        return self.counts[rows, np.maximum(self.states, 0)]

    def propose(self, rng: np.random.Generator) -> None:
        """Sample phi row, believed state and reward parameters for every particle."""
        if self.states[0] < 0:
            self.phi_rows = np.broadcast_to(self.initial_belief.probs, (self.num_particles, self.num_states)).copy()
        else:
            self.phi_rows = sample_dirichlet_rows(self._transition_parameters(), rng)
        self.proposed_states = sample_rows(self.phi_rows, rng)
        self.theta = self.family.sample_theta(self.reward_stats, rng)
        self._log_likelihoods = None

    def mean_rewards(self, context: Context) -> np.ndarray:
        """(N, K) mean rewards of each particle at its proposed state."""
        self._require_proposal()
        means = self.family.means(self.theta, context)
        return means[np.arange(self.num_particles), :, self.proposed_states]

    def weighted_mean_rewards(self, context: Context) -> np.ndarray:
        return self.weights @ self.mean_rewards(context)

    def _require_proposal(self) -> None:
        if self.theta is None:
            raise UsageError("propose() must run before scoring", code="UPDATE_WITHOUT_ACT")

    def _state_log_likelihoods(self, action: int, context: Context, reward: float) -> np.ndarray:
        self._require_proposal()
        key = (action, id(context), reward)
        if self._log_likelihoods is None or self._observation_key != key:
            self._log_likelihoods = self.family.log_likelihood(self.theta, action, context, reward)
            self._observation_key = key
        return self._log_likelihoods

    def predictive_log_likelihood(self, action: int, context: Context, reward: float) -> np.ndarray:
        """log sum_s phi(B_{t-1}, s) P(reward | s; theta) per particle."""
        log_lik = self._state_log_likelihoods(action, context, reward)
        with np.errstate(divide="ignore"):
            return logsumexp(np.log(self.phi_rows) + log_lik, axis=1)

    def ratio_log_weight(self, states: np.ndarray, action: int, context: Context, reward: float) -> np.ndarray:
        """log P(reward, B_t | B_{t-1}) - log P(B_t | reward, B_{t-1}) evaluated at `states`."""
        log_lik = self._state_log_likelihoods(action, context, reward)
        rows = np.arange(self.num_particles)
        with np.errstate(divide="ignore"):
            log_joint = np.log(self.phi_rows) + log_lik
        log_posterior = log_joint - logsumexp(log_joint, axis=1, keepdims=True)
        return log_joint[rows, states] - log_posterior[rows, states]

    def weight_update(self, action: int, context: Context, reward: float) -> np.ndarray:
        """Multiply weights by the predictive likelihood and renormalize in log space."""
        with np.errstate(divide="ignore"):
            log_weights = np.log(self.weights) + self.predictive_log_likelihood(action, context, reward)
        total = logsumexp(log_weights)
        if not np.isfinite(total):
            logger.warning("Particle weights underflowed in log space; resetting to uniform")
            self.weights = np.full(self.num_particles, 1.0 / self.num_particles)
        else:
            self.weights = np.exp(log_weights - total)
            self.weights /= self.weights.sum()
        return self.weights

    def commit(self, action: int, context: Context, reward: float, rng: np.random.Generator) -> np.ndarray:
        """Sample B_t from its reward-conditioned posterior and fold the round into the statistics."""
        log_lik = self._state_log_likelihoods(action, context, reward)
        with np.errstate(divide="ignore"):
            log_joint = np.log(self.phi_rows) + log_lik
        posterior = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
        new_states = sample_rows(posterior, rng)

        seen = self.states >= 0
        rows = np.nonzero(seen)[0]
        self.counts[rows, self.states[seen], new_states[seen]] += 1.0
        self.family.update(self.reward_stats, new_states, action, context, reward)
        self.states = new_states
        self.theta = None
        self._log_likelihoods = None
        return new_states

    def resample_if_needed(self, rng: np.random.Generator) -> bool:
        ess = self.ess
        if ess >= self.resample_fraction * self.num_particles:
            return False
        indices = resample_indices(self.weights, rng, self.scheme)
        self.states = self.states[indices]
        self.counts = self.counts[indices]
        self.reward_stats = self.reward_stats.take(indices)
        if self.phi_rows is not None:
            self.phi_rows = self.phi_rows[indices]
        self.weights = np.full(self.num_particles, 1.0 / self.num_particles)
        self.resample_count += 1
        logger.debug(f"Resampled {self.num_particles} particles (ESS {ess:.1f})")
        return True

    def observe(self, action: int, context: Context, reward: float, rng: np.random.Generator) -> None:
        """Full post-reward step: reweight, commit, resample."""
        self.weight_update(action, context, reward)
        self.commit(action, context, reward, rng)
        self.resample_if_needed(rng)

    def state_marginal(self) -> np.ndarray:
        """Weighted predictive distribution of the next latent state."""
        if self.states[0] < 0:
            return np.array(self.initial_belief.probs)
        rows = self._transition_parameters()
        rows = rows / rows.sum(axis=1, keepdims=True)
        return self.weights @ rows

    def particle(self, index: int) -> Particle:
        return Particle(
            current_state=int(self.states[index]),
            weight=float(self.weights[index]),
            dirichlet=DirichletCounts(self.counts[index]),
            reward_stats=self.reward_stats.particle(index),
            theta=None if self.theta is None else np.array(self.theta[index]),
            phi_row=None if self.phi_rows is None else np.array(self.phi_rows[index]),
        )

    def snapshot(self) -> pd.DataFrame:
        return pd.DataFrame({
            "particle_id": np.arange(self.num_particles),
            "state": self.states,
            "weight": self.weights,
        }, columns=SNAPSHOT_CSV_HEADER)

    def write_snapshot(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.snapshot().to_csv(path, index=False, float_format=FLOAT_FORMAT)


def pf_propose(particle_set: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    particle_set.propose(rng)
    return particle_set


def pf_weight_update(particle_set: ParticleSet, action: int, context: Context, reward: float) -> np.ndarray:
    return particle_set.weight_update(action, context, reward)


def resample_if_needed(particle_set: ParticleSet, rng: np.random.Generator,
                       threshold_fraction: Optional[float] = None) -> ParticleSet:
    if threshold_fraction is not None:
        particle_set.resample_fraction = threshold_fraction
    particle_set.resample_if_needed(rng)
    return particle_set

