# =============================================================================
# NSLB - BASELINE SERVICE
# =============================================================================

"""
Baseline policies: UCB1, Gaussian Thompson sampling, LinUCB and LinTS, their
change-detection wrappers, and the fixed-share exponential-weights agents
Exp3.S / Exp4.S whose experts are the per-state greedy policies.
"""

import logging
import math
from abc import abstractmethod
from collections import deque
from typing import Deque, Optional, Tuple

import numpy as np

from ..core.exceptions import ConfigurationError
from ..core.metrics import argmax_tiebreak
from ..core.types import Context, sample_categorical
from .agent_service import Agent

logger = logging.getLogger(__name__)


# =============================================================================
# CONTEXT-FREE BASES
# =============================================================================

class UCB1Agent(Agent):
    """UCB1 with index mean + sqrt(c log t / n); unplayed arms first."""

    name = "ucb1"

    def __init__(self, knowledge, rng, exploration: float = 2.0):
        super().__init__(knowledge, rng)
        self.exploration = exploration
        self._reset()

    def _reset(self):
        self.counts = np.zeros(self.knowledge.num_arms)
        self.sums = np.zeros(self.knowledge.num_arms)

    def _select(self, context):
        unplayed = np.nonzero(self.counts == 0)[0]
        if unplayed.size:
            return int(unplayed[0])
        total = self.counts.sum()
        index = self.sums / self.counts + np.sqrt(self.exploration * math.log(total) / self.counts)
        return argmax_tiebreak(index)

    def _observe(self, context, action, reward):
        self.counts[action] += 1.0
        self.sums[action] += reward


class GaussianTSAgent(Agent):
    """Per-arm Gaussian Thompson sampling with known noise variance."""

    name = "gaussian_ts"

    def __init__(self, knowledge, rng, prior_mean: float = 0.0, prior_std: float = 1.0):
        super().__init__(knowledge, rng)
        self.prior_mean = prior_mean
        self.prior_var = prior_std ** 2
        self.noise_var = knowledge.sigma ** 2
        self._reset()

    def _reset(self):
        self.counts = np.zeros(self.knowledge.num_arms)
        self.sums = np.zeros(self.knowledge.num_arms)

    def _select(self, context):
        scale = self.prior_var * self.counts + self.noise_var
        mean = (self.prior_var * self.sums + self.noise_var * self.prior_mean) / scale
        std = np.sqrt(self.prior_var * self.noise_var / scale)
        return argmax_tiebreak(mean + std * self.rng.standard_normal(mean.shape))

    def _observe(self, context, action, reward):
        self.counts[action] += 1.0
        self.sums[action] += reward


# =============================================================================
# LINEAR BASES
# =============================================================================

class LinUCBAgent(Agent):
    """Shared-parameter LinUCB over per-arm feature rows."""

    name = "linucb"

    def __init__(self, knowledge, rng, alpha: float = 1.0, ridge: float = 1.0):
        super().__init__(knowledge, rng)
        self.alpha = alpha
        self.ridge = ridge
        self._reset()

    def _reset(self):
        d = self.knowledge.feature_dim
        self.gram = self.ridge * np.eye(d)
        self.target = np.zeros(d)

    def _estimate(self) -> Tuple[np.ndarray, np.ndarray]:
        gram_inv = np.linalg.inv(self.gram)
        return gram_inv @ self.target, gram_inv

    def _select(self, context):
        theta, gram_inv = self._estimate()
        x = context.arm_features
        width = np.sqrt(np.einsum("kd,de,ke->k", x, gram_inv, x))
        return argmax_tiebreak(x @ theta + self.alpha * width)

    def _observe(self, context, action, reward):
        x = context.arm_features[action]
        self.gram += np.outer(x, x)
        self.target += reward * x


class LinTSAgent(LinUCBAgent):
    """Linear Thompson sampling: theta ~ N(theta_hat, scale * sigma^2 * A^-1)."""

    name = "lints"

    def __init__(self, knowledge, rng, ridge: float = 1.0, scale: float = 1.0):
        super().__init__(knowledge, rng, alpha=1.0, ridge=ridge)
        self.scale = scale

    def _select(self, context):
        theta, gram_inv = self._estimate()
        cov = self.scale * self.knowledge.sigma ** 2 * gram_inv
        sample = self.rng.multivariate_normal(theta, 0.5 * (cov + cov.T), method="cholesky")
        return argmax_tiebreak(context.arm_features @ sample)


# =============================================================================
# CHANGE DETECTORS
# =============================================================================

def detector_threshold_mab(sigma: float, window: int, num_arms: int, horizon: int) -> float:
    """b = sigma * sqrt(tau * log(2 K n^2) / 2), natural log."""
    return sigma * math.sqrt(window * math.log(2.0 * num_arms * horizon ** 2) / 2.0)


def weighted_norm(vector, matrix) -> float:
    """||v||_M = sqrt(v^T M v)."""
    vector = np.atleast_1d(np.asarray(vector, dtype=float))
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    return float(np.sqrt(max(vector @ matrix @ vector, 0.0)))


class MeanShiftDetector:
    """Per-arm two-window test on the sums of the last tau/2 rewards and the tau/2 before them."""

    def __init__(self, window: int, threshold: float, num_arms: int):
        if window % 2:
            raise ConfigurationError("detector window must be even")
        self.window = window
        self.half = window // 2
        self.threshold = threshold
        self.num_arms = num_arms
        self.reset()

    def reset(self) -> None:
        self.streams = [deque(maxlen=self.window) for _ in range(self.num_arms)]

    def statistic(self, action: int) -> float:
        stream = self.streams[action]
        if len(stream) < self.window:
            return 0.0
        values = np.fromiter(stream, dtype=float)
        return float(abs(values[self.half:].sum() - values[:self.half].sum()))

    def observe(self, action: int, context: Context, reward: float) -> bool:
        self.streams[action].append(reward)
        return self.statistic(action) > self.threshold


class LinearShiftDetector:
    """Fires when ||W - W'||_Sigma >= b for ridge fits on the two halves of the last tau rounds."""

    def __init__(self, window: int, threshold: float, dim: int, ridge: float):
        if window % 2:
            raise ConfigurationError("detector window must be even")
        self.window = window
        self.half = window // 2
        self.threshold = threshold
        self.dim = dim
        self.ridge = ridge
        self.reset()

    def reset(self) -> None:
        self.buffer: Deque[Tuple[np.ndarray, float]] = deque(maxlen=self.window)

    def _fit(self, features: np.ndarray, rewards: np.ndarray) -> np.ndarray:
        gram = features.T @ features + self.ridge * np.eye(self.dim)
        return np.linalg.solve(gram, features.T @ rewards)

    def statistic(self) -> float:
        if len(self.buffer) < self.window:
            return 0.0
        features = np.vstack([x for x, _ in self.buffer])
        rewards = np.array([r for _, r in self.buffer])
        older = self._fit(features[:self.half], rewards[:self.half])
        recent = self._fit(features[self.half:], rewards[self.half:])
        return weighted_norm(recent - older, features.T @ features)

    def observe(self, action: int, context: Context, reward: float) -> bool:
        self.buffer.append((np.array(context.arm_features[action]), reward))
        return self.statistic() >= self.threshold


class ChangeDetectionAgent(Agent):
    """Wraps a base agent and resets it, and the detector, whenever the detector fires."""

    def __init__(self, base: Agent, detector, name: str):
        super().__init__(base.knowledge, base.rng)
        self.base = base
        self.detector = detector
        self.name = name
        self.detections = []

    def _select(self, context):
        return self.base._select(context)

    def _observe(self, context, action, reward):
        self.base._observe(context, action, reward)
        if self.detector.observe(action, context, reward):
            logger.debug(f"{self.name}: change detected at round {self.t}")
            self.detections.append(self.t)
            self.base._reset()
            self.detector.reset()

    def _reset(self):
        self.base._reset()
        self.detector.reset()
        self.detections = []


# =============================================================================
# FIXED-SHARE EXPONENTIAL WEIGHTS
# =============================================================================

def expert_share_rates(num_experts: int, horizon: int) -> Tuple[float, float]:
    """Default (gamma, alpha): gamma = min(1, sqrt(|S| ln(|S| n) / ((e - 1) n))), alpha = 1 / n."""
    gamma = min(1.0, math.sqrt(num_experts * math.log(num_experts * horizon) / ((math.e - 1.0) * horizon)))
    return gamma, 1.0 / horizon


def expert_share_probabilities(weights: np.ndarray, advice: np.ndarray, gamma: float) -> np.ndarray:
    """Arm distribution (1 - gamma) * w^T advice + gamma / K."""
    num_arms = advice.shape[1]
    mixed = (weights / weights.sum()) @ advice
    return (1.0 - gamma) * mixed + gamma / num_arms


def expert_share_update(weights: np.ndarray, advice: np.ndarray, action: int, reward: float,
                        probs: np.ndarray, gamma: float, share: float) -> np.ndarray:
    """Exponential update with importance-weighted gains, then fixed-share mixing.

    Mixing with share / |S| keeps every normalized weight at or above that floor.
    """
    num_experts, num_arms = advice.shape
    gains = advice[:, action] * reward / probs[action]
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights) + gamma * gains / num_arms
    updated = np.exp(log_weights - log_weights.max())
    updated /= updated.sum()
    return (1.0 - share) * updated + share / num_experts


class ExpertShareAgent(Agent):
    """Fixed-share exponential weights over |S| experts, each playing the greedy arm of one latent state."""

    def __init__(self, knowledge, rng, gamma: Optional[float] = None, share: Optional[float] = None,
                 reward_range: Optional[Tuple[float, float]] = None):
        super().__init__(knowledge, rng)
        default_gamma, default_share = expert_share_rates(knowledge.num_states, knowledge.horizon)
        self.gamma = default_gamma if gamma is None else gamma
        self.share = default_share if share is None else share
        self.reward_range = tuple(reward_range) if reward_range is not None else knowledge.reward_range
        self.model = knowledge.model
        self._reset()

    def _reset(self):
        self.weights = np.full(self.knowledge.num_states, 1.0 / self.knowledge.num_states)
        self._advice: Optional[np.ndarray] = None
        self._probs: Optional[np.ndarray] = None

    @staticmethod
    def greedy_advice(means: np.ndarray) -> np.ndarray:
        """(|S|, K) one-hot rows from a K x |S| mean matrix."""
        advice = np.zeros((means.shape[1], means.shape[0]))
        for state in range(means.shape[1]):
            advice[state, argmax_tiebreak(means[:, state])] = 1.0
        return advice

    @abstractmethod
    def advice(self, context: Context) -> np.ndarray:
        ...

    def _select(self, context):
        self._advice = self.advice(context)
        self._probs = expert_share_probabilities(self.weights, self._advice, self.gamma)
        return sample_categorical(self._probs, self.rng)

    def _observe(self, context, action, reward):
        low, high = self.reward_range
        scaled = float(np.clip((reward - low) / (high - low), 0.0, 1.0))
        self.weights = expert_share_update(self.weights, self._advice, action, scaled,
                                           self._probs, self.gamma, self.share)


class Exp3SAgent(ExpertShareAgent):
    """Exp3.S on fixed arms: the advice is computed once from the K x |S| mean table."""

    name = "exp3s"

    def __init__(self, knowledge, rng, **params):
        super().__init__(knowledge, rng, **params)
        self._fixed_advice = self.greedy_advice(self.model.means(Context.empty(knowledge.num_arms)))

    def advice(self, context: Context) -> np.ndarray:
        return self._fixed_advice


class Exp4SAgent(ExpertShareAgent):
    """Exp4.S: each round, expert s scores the offered arms' features with state s's weights."""

    name = "exp4s"

    def advice(self, context: Context) -> np.ndarray:
        return self.greedy_advice(self.model.means(context))
