# =============================================================================
# NSLB - SERVICES MODULE
# =============================================================================

"""
Services module: environments, inference, agents, offline pipeline and the experiment runner.
"""

from .environment_service import Environment, EnvironmentKnowledge, EnvironmentStreams, build_environment
from .inference_service import ParticleSet, exact_joint_posterior, filter_update, forward_filter
from .agent_service import Agent, MTSAgent, UMTSExactAgent, UMTSParticleAgent, SWMUCBAgent, SWUMUCBAgent
from .offline_service import build_offline_artifacts, load_offline_artifacts
from .experiment_service import AggregateResult, build_agent, emit_results, run_experiment, run_one

__all__ = [
    # Environments
    "Environment",
    "EnvironmentKnowledge",
    "EnvironmentStreams",
    "build_environment",

    # Inference
    "ParticleSet",
    "exact_joint_posterior",
    "filter_update",
    "forward_filter",

    # Agents
    "Agent",
    "MTSAgent",
    "UMTSExactAgent",
    "UMTSParticleAgent",
    "SWMUCBAgent",
    "SWUMUCBAgent",

    # Offline pipeline
    "build_offline_artifacts",
    "load_offline_artifacts",

    # Runner
    "AggregateResult",
    "build_agent",
    "emit_results",
    "run_experiment",
    "run_one"
]
