# =============================================================================
# NSLB - DOMAIN TYPES
# =============================================================================

"""
Immutable domain types shared by environments, inference, agents and the runner.

Arrays held by these types are made read-only on construction, so instances can be
shared freely across parallel run workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .constants import (
    BELIEF_SUM_TOL,
    FLOAT_FORMAT,
    ROW_SUM_TOL,
    TRACE_CSV_HEADER,
    ModelKind,
)
from .exceptions import UsageError


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw consuming exactly one uniform from `rng`."""
    cumulative = np.cumsum(probs)
    u = rng.random() * cumulative[-1]
    index = int(np.searchsorted(cumulative, u, side="right"))
    return min(index, len(probs) - 1)


# =============================================================================
# CONTEXT & MODELS
# =============================================================================

@dataclass(frozen=True)
class Context:
    """Per-round arm features, one row per arm; d = 0 for context-free problems."""

    arm_features: np.ndarray
    item_ids: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        features = np.asarray(self.arm_features, dtype=float)
        if features.ndim != 2:
            raise UsageError("arm_features must be a K x d matrix", code="BAD_SHAPE")
        if not np.all(np.isfinite(features)):
            raise UsageError(code="NON_FINITE")
        if self.item_ids is not None and len(self.item_ids) != features.shape[0]:
            raise UsageError("item_ids must have one entry per arm", code="BAD_SHAPE")
        object.__setattr__(self, "arm_features", _frozen(features))

    @classmethod
    def empty(cls, num_arms: int) -> "Context":
        return cls(np.zeros((num_arms, 0)))

    @property
    def num_arms(self) -> int:
        return self.arm_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.arm_features.shape[1]


@dataclass(frozen=True)
class MeanRewardModel:
    """Mean reward mu(a, x, s; theta).

    Tabular models hold a K x |S| table; linear models hold one weight vector per
    state (|S| x d) and score an arm by the dot product with its feature row.
    """

    kind: ModelKind
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise UsageError("model values must be a matrix", code="BAD_SHAPE")
        if not np.all(np.isfinite(values)):
            raise UsageError(code="NON_FINITE")
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def tabular(cls, table) -> "MeanRewardModel":
        return cls(ModelKind.TABULAR, table)

    @classmethod
    def linear(cls, weights) -> "MeanRewardModel":
        return cls(ModelKind.LINEAR, weights)

    @property
    def num_states(self) -> int:
        return self.values.shape[1] if self.kind == ModelKind.TABULAR else self.values.shape[0]

    @property
    def num_arms(self) -> Optional[int]:
        return self.values.shape[0] if self.kind == ModelKind.TABULAR else None

    @property
    def feature_dim(self) -> int:
        return 0 if self.kind == ModelKind.TABULAR else self.values.shape[1]

    def means(self, context: Context) -> np.ndarray:
        """K x |S| matrix of mean rewards for the arms in `context`."""
        if self.kind == ModelKind.TABULAR:
            if context.num_arms != self.values.shape[0]:
                raise UsageError("context arm count does not match the model", code="BAD_SHAPE")
            return np.array(self.values)
        return context.arm_features @ self.values.T

    def mean(self, action: int, context: Context, state: int) -> float:
        if self.kind == ModelKind.TABULAR:
            return float(self.values[action, state])
        return float(context.arm_features[action] @ self.values[state])


# =============================================================================
# LATENT DYNAMICS
# =============================================================================

@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic |S| x |S| latent transition kernel."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
            raise UsageError("transition matrix must be square", code="BAD_SHAPE")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise UsageError(code="NEGATIVE_PROBABILITY")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise UsageError(f"row sums {probs.sum(axis=1)}", code="BAD_ROW_SUM")
        object.__setattr__(self, "probs", _frozen(probs))

    @classmethod
    def normalized(cls, raw) -> "TransitionMatrix":
        raw = np.asarray(raw, dtype=float)
        return cls(raw / raw.sum(axis=1, keepdims=True))

    @classmethod
    def uniform_switching(cls, num_states: int, change_prob: float) -> "TransitionMatrix":
        """Stay with probability 1 - p, otherwise move uniformly to another state."""
        if num_states == 1:
            return cls(np.ones((1, 1)))
        off = change_prob / (num_states - 1)
        probs = np.full((num_states, num_states), off)
        np.fill_diagonal(probs, 1.0 - change_prob)
        return cls.normalized(probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    def row(self, state: int) -> np.ndarray:
        return self.probs[state]

    def stationary_distribution(self) -> np.ndarray:
        """Solve pi^T P = pi^T with sum(pi) = 1 by least squares."""
        n = self.num_states
        system = np.vstack([self.probs.T - np.eye(n), np.ones((1, n))])
        target = np.zeros(n + 1)
        target[-1] = 1.0
        pi, *_ = np.linalg.lstsq(system, target, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()


@dataclass(frozen=True)
class BeliefVector:
    """Filtering distribution P_t(s)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise UsageError(code="BAD_BELIEF")
        if abs(probs.sum() - 1.0) > BELIEF_SUM_TOL:
            raise UsageError(f"sum = {probs.sum()!r}", code="BAD_BELIEF")
        object.__setattr__(self, "probs", _frozen(probs))

    @classmethod
    def uniform(cls, num_states: int) -> "BeliefVector":
        return cls(np.full(num_states, 1.0 / num_states))

    @classmethod
    def one_hot(cls, num_states: int, state: int) -> "BeliefVector":
        probs = np.zeros(num_states)
        probs[state] = 1.0
        return cls(probs)

    @classmethod
    def from_unnormalized(cls, mass) -> "BeliefVector":
        mass = np.asarray(mass, dtype=float)
        return cls(mass / mass.sum())

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class DirichletCounts:
    """Row s holds the Dirichlet parameters of the transition row phi_s."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1]:
            raise UsageError("Dirichlet counts must be square", code="BAD_CONFIG")
        if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
            raise UsageError("Dirichlet counts must be positive", code="BAD_CONFIG")
        object.__setattr__(self, "alpha", _frozen(alpha))

    @classmethod
    def diagonal(cls, num_states: int, self_count: float, other_count: float) -> "DirichletCounts":
        alpha = np.full((num_states, num_states), other_count, dtype=float)
        np.fill_diagonal(alpha, self_count)
        return cls(alpha)

    @classmethod
    def from_transition(cls, transition: TransitionMatrix, scale: float) -> "DirichletCounts":
        return cls(scale * transition.probs)

    @property
    def num_states(self) -> int:
        return self.alpha.shape[0]

    def mean(self) -> TransitionMatrix:
        return TransitionMatrix.normalized(self.alpha)

    def add_transitions(self, counts) -> "DirichletCounts":
        return DirichletCounts(self.alpha + np.asarray(counts, dtype=float))


# =============================================================================
# TRACES
# =============================================================================

@dataclass(frozen=True)
class RoundRecord:
    """One round of agent/environment interaction."""

    t: int
    context: Context
    action: int
    reward: float
    true_state: int
    optimal_action: int
    optimal_mean: float
    chosen_mean: float

    @property
    def instant_regret(self) -> float:
        return self.optimal_mean - self.chosen_mean


@dataclass(frozen=True)
class RunTrace:
    """Ordered per-round records of a single run."""

    records: Tuple[RoundRecord, ...]
    seed: int
    agent_name: str
    env_name: str
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        for expected, record in enumerate(records, start=1):
            if record.t != expected:
                raise UsageError(f"records must be contiguous from 1; got t={record.t} at position {expected}",
                                 code="NON_CONTIGUOUS")
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)

    def instant_regret(self) -> np.ndarray:
        return np.array([r.optimal_mean - r.chosen_mean for r in self.records])

    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])

    def chosen_means(self) -> np.ndarray:
        return np.array([r.chosen_mean for r in self.records])

    def states(self) -> np.ndarray:
        return np.array([r.true_state for r in self.records], dtype=int)

    def actions(self) -> np.ndarray:
        return np.array([r.action for r in self.records], dtype=int)

    def to_csv(self, path) -> None:
        """Write `t,action,reward,true_state,optimal_action,instant_regret`."""
        frame = pd.DataFrame(
            {
                "t": [r.t for r in self.records],
                "action": self.actions(),
                "reward": self.rewards(),
                "true_state": self.states(),
                "optimal_action": [r.optimal_action for r in self.records],
                "instant_regret": self.instant_regret(),
            },
            columns=TRACE_CSV_HEADER,
        )
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


__all__ = [
    "Context",
    "MeanRewardModel",
    "TransitionMatrix",
    "BeliefVector",
    "DirichletCounts",
    "RoundRecord",
    "RunTrace",
    "sample_categorical",
]
