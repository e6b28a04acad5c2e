# =============================================================================
# NSLB - CONSTANTS & ENUMS
# =============================================================================

"""
Application constants and enumerations.
Centralized location for all numerical defaults and message templates.
"""

from enum import Enum


class ModelKind(str, Enum):
    """Mean reward model parameterization."""
    TABULAR = "tabular"
    LINEAR = "linear"


class ScheduleKind(str, Enum):
    """Latent state schedule."""
    FIXED_PERIOD = "fixed_period"
    STOCHASTIC = "stochastic"


class RewardNoise(str, Enum):
    """Reward distribution around the mean."""
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"


class ModelSource(str, Enum):
    """How the true model relates to what agents are told."""
    KNOWN = "known"
    PRIOR_SAMPLE = "prior_sample"
    GRID = "grid"


class EnvironmentKind(str, Enum):
    """Environment generator."""
    SYNTHETIC = "synthetic"
    SUPERUSER = "superuser"


class GenreSampling(str, Enum):
    """How genres are drawn when building a movie context."""
    WITHOUT_REPLACEMENT = "without_replacement"
    WITH_REPLACEMENT = "with_replacement"


class ConjugateFamilyKind(str, Enum):
    """Reward prior family."""
    GAUSSIAN_TABULAR = "gaussian_tabular"
    GAUSSIAN_LINEAR = "gaussian_linear"
    BETA_BERNOULLI = "beta_bernoulli"
    DISCRETE_GRID = "discrete_grid"


class ResamplingScheme(str, Enum):
    """Particle resampling scheme."""
    MULTINOMIAL = "multinomial"
    SYSTEMATIC = "systematic"


class MetricKind(str, Enum):
    """Metric aggregated across runs."""
    CUMULATIVE_REGRET = "cumulative_regret"
    PER_ROUND_REWARD = "per_round_reward"


class AgentName(str, Enum):
    """Agent registry keys addressable from experiment configs."""
    ORACLE = "oracle"
    MTS = "mts"
    UMTS_EXACT = "umts_exact"
    UMTS_PF = "umts_pf"
    SW_MUCB = "sw_mucb"
    SW_UMUCB = "sw_umucb"
    UCB1 = "ucb1"
    GAUSSIAN_TS = "gaussian_ts"
    LINUCB = "linucb"
    LINTS = "lints"
    CD_UCB = "cd_ucb"
    CD_TS = "cd_ts"
    CD_LINUCB = "cd_linucb"
    CD_LINTS = "cd_lints"
    EXP3S = "exp3s"
    EXP4S = "exp4s"


# Agents that need per-arm feature vectors.
CONTEXTUAL_ONLY_AGENTS = {
    AgentName.LINUCB,
    AgentName.LINTS,
    AgentName.CD_LINUCB,
    AgentName.CD_LINTS,
    AgentName.EXP4S,
}

# Agents that treat arms as fixed identities across rounds.
CONTEXT_FREE_ONLY_AGENTS = {
    AgentName.UCB1,
    AgentName.GAUSSIAN_TS,
    AgentName.CD_UCB,
    AgentName.CD_TS,
    AgentName.EXP3S,
}


# =============================================================================
# NUMERICAL TOLERANCES
# =============================================================================

ROW_SUM_TOL = 1e-12
BELIEF_SUM_TOL = 1e-12
WEIGHT_SUM_TOL = 1e-9

# =============================================================================
# EXPERIMENT DEFAULTS
# =============================================================================

DEFAULT_HORIZON = 2000
DEFAULT_NUM_RUNS = 100
DEFAULT_SIGMA = 0.5
DEFAULT_PERIOD = 200
DEFAULT_CHANGE_PROB = 0.0025
DEFAULT_PRIOR_STD = 0.2
DEFAULT_DIRICHLET_SELF = 796.0
DEFAULT_DIRICHLET_OTHER = 1.0
DEFAULT_GRID_SIZE = 2

# =============================================================================
# AGENT DEFAULTS
# =============================================================================

DEFAULT_NUM_PARTICLES = 1000
DEFAULT_RESAMPLE_FRACTION = 0.5
DETECTOR_WINDOW = 100
LINEAR_DETECTOR_THRESHOLD = 13.0
DETECTOR_RIDGE = 1e-3
LINEAR_PRIOR_RIDGE = 1.0

# Exact joint posterior guard
EXACT_POSTERIOR_MAX_T = 12
EXACT_POSTERIOR_MAX_STATES = 3

# =============================================================================
# OFFLINE PIPELINE DEFAULTS
# =============================================================================

MIN_USER_RATINGS = 200
MIN_MOVIE_RATINGS = 200
TRAIN_FRACTION = 0.5
ALS_RANK = 20
ALS_REGULARIZATION = 0.05
ALS_ITERATIONS = 20
KMEANS_CLUSTERS = 5
KMEANS_MAX_ITER = 300
DIRICHLET_SCALE = 800.0
PRIOR_DIAGONAL_LOAD = 1e-6
SUPERUSER_MIX = 0.9
ARMS_PER_ROUND = 20
REWARD_VARIANCE = 0.25

# =============================================================================
# FILE FORMATS
# =============================================================================

TRACE_CSV_HEADER = ["t", "action", "reward", "true_state", "optimal_action", "instant_regret"]
CURVES_CSV_HEADER = ["round", "agent", "mean", "stderr"]
SUMMARY_CSV_HEADER = ["agent", "final_mean", "final_stderr"]
SNAPSHOT_CSV_HEADER = ["particle_id", "state", "weight"]
FLOAT_FORMAT = "%.17g"

# =============================================================================
# ERROR MESSAGES
# =============================================================================

ERROR_MESSAGES = {
    "EMPTY_ARGMAX": "Cannot take the arg max of an empty vector",
    "NON_FINITE": "Values must be finite",
    "BAD_SHAPE": "Array has the wrong shape",
    "BAD_ROW_SUM": "Transition rows must sum to 1",
    "NEGATIVE_PROBABILITY": "Probabilities must be non-negative",
    "BAD_BELIEF": "Belief must be a normalized probability vector",
    "ZERO_LIKELIHOOD": "All likelihoods are zero; work in log space",
    "INSTANCE_TOO_LARGE": "Exact joint posterior refused: instance too large",
    "NOT_ENOUGH_GENRES": "Catalog does not have enough distinct genres",
    "AGENT_ENV_MISMATCH": "Agent is not compatible with this environment",
    "UNKNOWN_AGENT": "Unknown agent name",
    "UPDATE_WITHOUT_ACT": "update() called without a preceding act()",
    "ACTION_MISMATCH": "update() action differs from the acted action",
    "MISSING_FILE": "File not found",
    "MALFORMED_LINE": "Malformed line",
    "DUPLICATE_RATING": "Duplicate (user, movie) rating",
    "EMPTY_TRACE": "Trace has no records",
    "NON_CONTIGUOUS": "Trace rounds must run 1, 2, ... without gaps",
    "BAD_CONFIG": "Invalid experiment configuration",
}

# =============================================================================
# SUCCESS MESSAGES
# =============================================================================

SUCCESS_MESSAGES = {
    "RUN_COMPLETE": "Experiment finished",
    "OFFLINE_COMPLETE": "Offline artifacts written",
}
