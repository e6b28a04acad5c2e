# =============================================================================
# NSLB - CORE MODULE
# =============================================================================

"""
Core module: constants, exceptions, logging and the shared domain types.
"""

from .constants import (
    AgentName,
    ModelKind,
    ScheduleKind,
    MetricKind,
    ERROR_MESSAGES,
    SUCCESS_MESSAGES
)
from .exceptions import (
    NSLBError,
    UsageError,
    ConfigurationError,
    NumericUnderflowError,
    InstanceTooLargeError,
    AgentProtocolError,
    DataFormatError
)
from .types import (
    Context,
    MeanRewardModel,
    TransitionMatrix,
    BeliefVector,
    DirichletCounts,
    RoundRecord,
    RunTrace,
    sample_categorical
)
from .metrics import argmax_tiebreak, cumulative_regret, segment_count

__all__ = [
    "AgentName",
    "ModelKind",
    "ScheduleKind",
    "MetricKind",
    "ERROR_MESSAGES",
    "SUCCESS_MESSAGES",
    "NSLBError",
    "UsageError",
    "ConfigurationError",
    "NumericUnderflowError",
    "InstanceTooLargeError",
    "AgentProtocolError",
    "DataFormatError",
    "Context",
    "MeanRewardModel",
    "TransitionMatrix",
    "BeliefVector",
    "DirichletCounts",
    "RoundRecord",
    "RunTrace",
    "sample_categorical",
    "argmax_tiebreak",
    "cumulative_regret",
    "segment_count"
]
