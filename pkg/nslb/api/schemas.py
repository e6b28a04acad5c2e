# =============================================================================
# NSLB - PYDANTIC SCHEMAS
# =============================================================================

"""
Pydantic schemas for experiment configuration files.

A config file (TOML, or the JSON echo written next to results) validates into
`ExperimentConfig`: one environment spec, discriminated on `kind`, and a list of
agent entries whose `params` are checked against the schema registered for the
agent's name.
"""

import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ..core.constants import (
    ALS_ITERATIONS,
    ALS_RANK,
    ALS_REGULARIZATION,
    ARMS_PER_ROUND,
    DEFAULT_CHANGE_PROB,
    DEFAULT_DIRICHLET_OTHER,
    DEFAULT_DIRICHLET_SELF,
    DEFAULT_GRID_SIZE,
    DEFAULT_HORIZON,
    DEFAULT_NUM_PARTICLES,
    DEFAULT_NUM_RUNS,
    DEFAULT_PRIOR_STD,
    DEFAULT_RESAMPLE_FRACTION,
    DEFAULT_SIGMA,
    DETECTOR_RIDGE,
    DETECTOR_WINDOW,
    DIRICHLET_SCALE,
    KMEANS_CLUSTERS,
    LINEAR_PRIOR_RIDGE,
    MIN_MOVIE_RATINGS,
    MIN_USER_RATINGS,
    REWARD_VARIANCE,
    SUPERUSER_MIX,
    TRAIN_FRACTION,
    AgentName,
    GenreSampling,
    MetricKind,
    ModelSource,
    ResamplingScheme,
    RewardNoise,
    ROW_SUM_TOL,
)
from ..core.exceptions import ConfigurationError, DataFormatError

logger = logging.getLogger(__name__)


# =============================================================================
# BASE SCHEMAS
# =============================================================================

class BaseSchema(BaseModel):
    """Base schema with common configuration."""

    class Config:
        str_strip_whitespace = True
        extra = "forbid"


# =============================================================================
# SCHEDULE SCHEMAS
# =============================================================================

class FixedPeriodSchedule(BaseSchema):
    """Latent state advances cyclically every `period` rounds."""
    kind: Literal["fixed_period"] = "fixed_period"
    period: int = Field(200, ge=1, description="Rounds between deterministic changes")


class StochasticSchedule(BaseSchema):
    """Latent state follows a Markov chain."""
    kind: Literal["stochastic"] = "stochastic"
    change_prob: float = Field(DEFAULT_CHANGE_PROB, gt=0.0, lt=1.0,
                               description="Probability of leaving the current state each round")
    transition: Optional[List[List[float]]] = Field(None, description="Explicit row-stochastic matrix")

    @field_validator("transition")
    @classmethod
    def validate_transition(cls, value):
        if value is None:
            return value
        matrix = np.asarray(value, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("transition must be a square matrix")
        if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("transition rows must be non-negative and sum to 1")
        return value


Schedule = Annotated[Union[FixedPeriodSchedule, StochasticSchedule], Field(discriminator="kind")]


# =============================================================================
# ENVIRONMENT SCHEMAS
# =============================================================================

class SyntheticEnvConfig(BaseSchema):
    """Context-free latent bandit with a K x |S| mean table."""
    kind: Literal["synthetic"] = "synthetic"
    num_arms: int = Field(5, ge=1, description="Number of arms K")
    num_states: int = Field(5, ge=1, description="Number of latent states")
    sigma: float = Field(DEFAULT_SIGMA, gt=0.0, description="Gaussian reward noise std")
    noise: RewardNoise = Field(RewardNoise.GAUSSIAN, description="Reward distribution")
    schedule: Schedule = Field(default_factory=FixedPeriodSchedule)
    model_source: ModelSource = Field(ModelSource.KNOWN, description="What agents are told about the model")
    means: Optional[List[List[float]]] = Field(None, description="Fixed K x |S| mean table")
    prior_std: float = Field(DEFAULT_PRIOR_STD, gt=0.0, description="Prior std around the mean table")
    dirichlet_self: float = Field(DEFAULT_DIRICHLET_SELF, gt=0.0)
    dirichlet_other: float = Field(DEFAULT_DIRICHLET_OTHER, gt=0.0)
    dirichlet_scale: float = Field(DIRICHLET_SCALE, gt=0.0,
                                   description="Dirichlet prior scale around a known transition matrix")
    grid_size: int = Field(DEFAULT_GRID_SIZE, ge=1, description="Number of candidate models for a grid prior")

    @model_validator(mode="after")
    def check_consistency(self):
        if self.means is not None:
            table = np.asarray(self.means, dtype=float)
            if table.shape != (self.num_arms, self.num_states):
                raise ValueError(f"means must be {self.num_arms} x {self.num_states}")
            if self.noise == RewardNoise.BERNOULLI and (table.min() < 0 or table.max() > 1):
                raise ValueError("Bernoulli means must lie in [0, 1]")
        if isinstance(self.schedule, StochasticSchedule) and self.schedule.transition is not None:
            if len(self.schedule.transition) != self.num_states:
                raise ValueError("transition size must equal num_states")
        return self


class SuperuserEnvConfig(BaseSchema):
    """Linear superuser environment built from offline artifacts."""
    kind: Literal["superuser"] = "superuser"
    artifacts_dir: str = Field(..., description="Directory written by `offline build`")
    arms_per_round: int = Field(ARMS_PER_ROUND, ge=1)
    reward_variance: float = Field(REWARD_VARIANCE, gt=0.0)
    change_prob: float = Field(DEFAULT_CHANGE_PROB, gt=0.0, lt=1.0)
    mix: float = Field(SUPERUSER_MIX, ge=0.0, le=1.0, description="Weight of the uniform-switching part")
    genre_sampling: GenreSampling = Field(GenreSampling.WITHOUT_REPLACEMENT)


EnvConfig = Annotated[Union[SyntheticEnvConfig, SuperuserEnvConfig], Field(discriminator="kind")]


# =============================================================================
# AGENT PARAMETER SCHEMAS
# =============================================================================

class NoParams(BaseSchema):
    """Agents without hyperparameters."""


class ParticleFilterParams(BaseSchema):
    num_particles: int = Field(DEFAULT_NUM_PARTICLES, ge=1)
    resample_fraction: float = Field(DEFAULT_RESAMPLE_FRACTION, ge=0.0, le=1.0)
    scheme: ResamplingScheme = Field(ResamplingScheme.MULTINOMIAL)


class SlidingWindowParams(BaseSchema):
    window: Optional[int] = Field(None, ge=1, description="Window length; derived from the horizon if unset")
    window_scale: float = Field(1.0, gt=0.0, description="Scale of the derived window")
    segments: Optional[int] = Field(None, ge=1, description="Expected number of stationary segments")


class SlidingWindowPriorParams(SlidingWindowParams):
    epsilon: float = Field(0.0, ge=0.0, description="Slack subtracted from every gap term")


class UCB1Params(BaseSchema):
    exploration: float = Field(2.0, gt=0.0)


class GaussianTSParams(BaseSchema):
    prior_mean: float = 0.0
    prior_std: float = Field(1.0, gt=0.0)


class LinUCBParams(BaseSchema):
    alpha: float = Field(1.0, gt=0.0)
    ridge: float = Field(LINEAR_PRIOR_RIDGE, gt=0.0)


class LinTSParams(BaseSchema):
    ridge: float = Field(LINEAR_PRIOR_RIDGE, gt=0.0)
    scale: float = Field(1.0, gt=0.0, description="Posterior covariance multiplier")


class ChangeDetectionParams(BaseSchema):
    window: int = Field(DETECTOR_WINDOW, ge=2, description="Detector window; split into two halves")
    threshold: Optional[float] = Field(None, gt=0.0, description="Detector threshold b")
    detector_ridge: float = Field(DETECTOR_RIDGE, gt=0.0, description="Ridge for half-window regressions")

    @field_validator("window")
    @classmethod
    def validate_even(cls, value):
        if value % 2:
            raise ValueError("window must be even")
        return value


class CDUCBParams(ChangeDetectionParams, UCB1Params):
    pass


class CDTSParams(ChangeDetectionParams, GaussianTSParams):
    pass


class CDLinUCBParams(ChangeDetectionParams, LinUCBParams):
    pass


class CDLinTSParams(ChangeDetectionParams, LinTSParams):
    pass


class ExpertShareParams(BaseSchema):
    gamma: Optional[float] = Field(None, gt=0.0, le=1.0, description="Exploration rate")
    share: Optional[float] = Field(None, ge=0.0, lt=1.0, description="Fixed-share mixing alpha")
    reward_range: Optional[Tuple[float, float]] = Field(None, description="Rewards are rescaled from this range")

    @field_validator("reward_range")
    @classmethod
    def validate_range(cls, value):
        if value is not None and value[1] <= value[0]:
            raise ValueError("reward_range must be increasing")
        return value


AGENT_PARAM_SCHEMAS: Dict[AgentName, Type[BaseSchema]] = {
    AgentName.ORACLE: NoParams,
    AgentName.MTS: NoParams,
    AgentName.UMTS_EXACT: NoParams,
    AgentName.UMTS_PF: ParticleFilterParams,
    AgentName.SW_MUCB: SlidingWindowParams,
    AgentName.SW_UMUCB: SlidingWindowPriorParams,
    AgentName.UCB1: UCB1Params,
    AgentName.GAUSSIAN_TS: GaussianTSParams,
    AgentName.LINUCB: LinUCBParams,
    AgentName.LINTS: LinTSParams,
    AgentName.CD_UCB: CDUCBParams,
    AgentName.CD_TS: CDTSParams,
    AgentName.CD_LINUCB: CDLinUCBParams,
    AgentName.CD_LINTS: CDLinTSParams,
    AgentName.EXP3S: ExpertShareParams,
    AgentName.EXP4S: ExpertShareParams,
}


class AgentSpec(BaseSchema):
    """One agent entry: registry name, optional display label and hyperparameters."""
    name: AgentName = Field(..., description="Agent registry key")
    label: Optional[str] = Field(None, min_length=1, description="Name used in result files")
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def resolve_params(self):
        schema = AGENT_PARAM_SCHEMAS[self.name]
        self.params = schema(**self.params).model_dump(mode="json")
        if self.label is None:
            self.label = self.name.value
        return self

    def typed_params(self) -> BaseSchema:
        return AGENT_PARAM_SCHEMAS[self.name](**self.params)


# =============================================================================
# EXPERIMENT SCHEMA
# =============================================================================

class ExperimentConfig(BaseSchema):
    """Resolved experiment: environment, agents and replication settings."""
    env: EnvConfig
    agents: List[AgentSpec] = Field(..., min_length=1)
    horizon: int = Field(DEFAULT_HORIZON, ge=1, description="Rounds per run")
    num_runs: int = Field(DEFAULT_NUM_RUNS, ge=1, description="Independent replications")
    seed: int = Field(0, ge=0, description="Base seed")
    metric: MetricKind = Field(MetricKind.CUMULATIVE_REGRET)
    summary_window: Optional[int] = Field(None, ge=1, description="Summarize the mean of the last rounds")
    output_dir: Optional[str] = Field(None, description="Result directory")

    @model_validator(mode="after")
    def check_agents(self):
        labels = [agent.label for agent in self.agents]
        if len(set(labels)) != len(labels):
            raise ValueError(f"agent labels must be unique: {labels}")
        if self.summary_window is not None and self.summary_window > self.horizon:
            raise ValueError("summary_window cannot exceed the horizon")
        return self

    def with_overrides(self, runs: Optional[int] = None, horizon: Optional[int] = None,
                       seed: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        """Copy with CLI overrides applied and re-validated."""
        data = self.model_dump(mode="json")
        for key, value in (("num_runs", runs), ("horizon", horizon), ("seed", seed), ("output_dir", output_dir)):
            if value is not None:
                data[key] = value
        return ExperimentConfig(**data)

    def echo(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


# =============================================================================
# OFFLINE PIPELINE SCHEMA
# =============================================================================

class OfflineBuildConfig(BaseSchema):
    """Hyperparameters of `offline build`."""
    seed: int = Field(0, ge=0)
    min_user: int = Field(MIN_USER_RATINGS, ge=0, description="Minimum ratings per user")
    min_movie: int = Field(MIN_MOVIE_RATINGS, ge=0, description="Minimum ratings per movie")
    fixpoint: bool = Field(False, description="Repeat the density filter until nothing changes")
    train_fraction: float = Field(TRAIN_FRACTION, gt=0.0, lt=1.0)
    rank: int = Field(ALS_RANK, ge=1)
    reg: float = Field(ALS_REGULARIZATION, gt=0.0, description="L2 regularization of both factors")
    iterations: int = Field(ALS_ITERATIONS, ge=1)
    clusters: int = Field(KMEANS_CLUSTERS, ge=1, description="Number of latent states")
    dirichlet_scale: float = Field(DIRICHLET_SCALE, gt=0.0)
    change_prob: float = Field(DEFAULT_CHANGE_PROB, gt=0.0, lt=1.0)
    mix: float = Field(SUPERUSER_MIX, ge=0.0, le=1.0)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a TOML or JSON experiment config."""
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(path=str(path), code="MISSING_FILE")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            with path.open("rb") as handle:
                data = tomllib.load(handle)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}")
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        logger.error(f"Invalid experiment config {path}: {exc.error_count()} error(s)")
        raise
