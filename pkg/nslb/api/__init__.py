# =============================================================================
# NSLB - API SCHEMAS MODULE
# =============================================================================

"""
Validated configuration schemas for experiments and the offline pipeline.
"""

from .schemas import (
    AgentSpec,
    ExperimentConfig,
    FixedPeriodSchedule,
    OfflineBuildConfig,
    StochasticSchedule,
    SuperuserEnvConfig,
    SyntheticEnvConfig,
    load_config
)

__all__ = [
    "AgentSpec",
    "ExperimentConfig",
    "FixedPeriodSchedule",
    "OfflineBuildConfig",
    "StochasticSchedule",
    "SuperuserEnvConfig",
    "SyntheticEnvConfig",
    "load_config"
]
