# =============================================================================
# NSLB - EXPERIMENT SERVICE
# =============================================================================

"""
Experiment orchestration.

`run_one` plays one agent against one freshly built environment for a full
horizon. `run_experiment` replicates every (run, agent) pair in parallel and
reduces the per-round metric curves into means and standard errors.
`emit_results` writes the curves, the summary table and the resolved config.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..api.schemas import AgentSpec, ExperimentConfig, SuperuserEnvConfig
from ..config import settings
from ..core.constants import (
    CONTEXT_FREE_ONLY_AGENTS,
    CONTEXTUAL_ONLY_AGENTS,
    CURVES_CSV_HEADER,
    FLOAT_FORMAT,
    LINEAR_DETECTOR_THRESHOLD,
    SUCCESS_MESSAGES,
    SUMMARY_CSV_HEADER,
    AgentName,
    MetricKind,
)
from ..core.exceptions import ConfigurationError, DataFormatError
from ..core.metrics import argmax_tiebreak, cumulative_regret
from ..core.types import RoundRecord, RunTrace
from .agent_service import (
    Agent,
    MTSAgent,
    OracleAgent,
    SWMUCBAgent,
    SWUMUCBAgent,
    UMTSExactAgent,
    UMTSParticleAgent,
)
from .baseline_service import (
    ChangeDetectionAgent,
    Exp3SAgent,
    Exp4SAgent,
    GaussianTSAgent,
    LinearShiftDetector,
    LinTSAgent,
    LinUCBAgent,
    MeanShiftDetector,
    UCB1Agent,
    detector_threshold_mab,
)
from .environment_service import Environment, EnvironmentKnowledge, EnvironmentStreams, SuperuserData, build_environment
from .offline_service import load_offline_artifacts

logger = logging.getLogger(__name__)


# =============================================================================
# AGENT REGISTRY
# =============================================================================

AgentFactory = Callable[[dict, EnvironmentKnowledge, np.random.Generator, Optional[Environment]], Agent]


def _oracle(params, knowledge, rng, environment):
    if environment is None:
        raise ConfigurationError("oracle agent needs the environment's true means")
    return OracleAgent(knowledge, rng, environment.true_means)


def _cd_mab(base_cls, base_keys, name):
    def factory(params, knowledge, rng, environment):
        base = base_cls(knowledge, rng, **{key: params[key] for key in base_keys})
        threshold = params["threshold"]
        if threshold is None:
            threshold = detector_threshold_mab(knowledge.sigma, params["window"], knowledge.num_arms, knowledge.horizon)
        detector = MeanShiftDetector(params["window"], threshold, knowledge.num_arms)
        return ChangeDetectionAgent(base, detector, name)
    return factory


def _cd_linear(base_cls, base_keys, name):
    def factory(params, knowledge, rng, environment):
        base = base_cls(knowledge, rng, **{key: params[key] for key in base_keys})
        threshold = params["threshold"] if params["threshold"] is not None else LINEAR_DETECTOR_THRESHOLD
        detector = LinearShiftDetector(params["window"], threshold, knowledge.feature_dim, params["detector_ridge"])
        return ChangeDetectionAgent(base, detector, name)
    return factory


AGENT_REGISTRY: Dict[AgentName, AgentFactory] = {
    AgentName.ORACLE: _oracle,
    AgentName.MTS: lambda params, knowledge, rng, env: MTSAgent(knowledge, rng),
    AgentName.UMTS_EXACT: lambda params, knowledge, rng, env: UMTSExactAgent(knowledge, rng),
    AgentName.UMTS_PF: lambda params, knowledge, rng, env: UMTSParticleAgent(knowledge, rng, **params),
    AgentName.SW_MUCB: lambda params, knowledge, rng, env: SWMUCBAgent(knowledge, rng, **params),
    AgentName.SW_UMUCB: lambda params, knowledge, rng, env: SWUMUCBAgent(knowledge, rng, **params),
    AgentName.UCB1: lambda params, knowledge, rng, env: UCB1Agent(knowledge, rng, **params),
    AgentName.GAUSSIAN_TS: lambda params, knowledge, rng, env: GaussianTSAgent(knowledge, rng, **params),
    AgentName.LINUCB: lambda params, knowledge, rng, env: LinUCBAgent(knowledge, rng, **params),
    AgentName.LINTS: lambda params, knowledge, rng, env: LinTSAgent(knowledge, rng, **params),
    AgentName.CD_UCB: _cd_mab(UCB1Agent, ("exploration",), "cd_ucb"),
    AgentName.CD_TS: _cd_mab(GaussianTSAgent, ("prior_mean", "prior_std"), "cd_ts"),
    AgentName.CD_LINUCB: _cd_linear(LinUCBAgent, ("alpha", "ridge"), "cd_linucb"),
    AgentName.CD_LINTS: _cd_linear(LinTSAgent, ("ridge", "scale"), "cd_lints"),
    AgentName.EXP3S: lambda params, knowledge, rng, env: Exp3SAgent(knowledge, rng, **params),
    AgentName.EXP4S: lambda params, knowledge, rng, env: Exp4SAgent(knowledge, rng, **params),
}


def check_compatibility(name: AgentName, knowledge: EnvironmentKnowledge) -> None:
    if name in CONTEXTUAL_ONLY_AGENTS and not knowledge.contextual:
        raise ConfigurationError(f"{name.value} needs arm features", code="AGENT_ENV_MISMATCH")
    if name in CONTEXT_FREE_ONLY_AGENTS and knowledge.contextual:
        raise ConfigurationError(f"{name.value} needs a fixed arm set", code="AGENT_ENV_MISMATCH")


def build_agent(spec: AgentSpec, knowledge: EnvironmentKnowledge, rng: np.random.Generator,
                environment: Optional[Environment] = None) -> Agent:
    """Instantiate the registered agent for `spec` with its validated params."""
    if spec.name not in AGENT_REGISTRY:
        raise ConfigurationError(str(spec.name), code="UNKNOWN_AGENT")
    check_compatibility(spec.name, knowledge)
    params = spec.typed_params().model_dump()
    return AGENT_REGISTRY[spec.name](params, knowledge, rng, environment)


# =============================================================================
# SEEDING
# =============================================================================

def _stream_key(stream_name: str) -> int:
    return int(hashlib.sha256(stream_name.encode("utf-8")).hexdigest()[:8], 16)


def derive_seed(base_seed: int, run_index: int, stream_name: str, agent_index: int = 0) -> np.random.SeedSequence:
    """Named random stream for (base seed, run, stream, agent)."""
    return np.random.SeedSequence([base_seed, run_index, _stream_key(stream_name), agent_index])


def make_streams(base_seed: int, run_index: int) -> EnvironmentStreams:
    """Environment streams shared by every agent of a run."""
    return EnvironmentStreams(
        latent=np.random.default_rng(derive_seed(base_seed, run_index, "latent")),
        context=np.random.default_rng(derive_seed(base_seed, run_index, "context")),
        reward=np.random.default_rng(derive_seed(base_seed, run_index, "reward")),
    )


def agent_rng(base_seed: int, run_index: int, agent_index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, run_index, "agent", agent_index))


# =============================================================================
# SINGLE RUN
# =============================================================================

def load_superuser_data(config: ExperimentConfig) -> Optional[SuperuserData]:
    if isinstance(config.env, SuperuserEnvConfig):
        return load_offline_artifacts(config.env.artifacts_dir).superuser_data()
    return None


def play(environment: Environment, agent: Agent, horizon: int) -> List[RoundRecord]:
    """The act -> pull -> update -> advance loop."""
    records = []
    for t in range(1, horizon + 1):
        context = environment.observe_context(t)
        means = environment.true_means(context)
        state = environment.state
        action = agent.act(context)
        reward = environment.pull(action, context)
        agent.update(context, action, reward)
        optimal = argmax_tiebreak(means)
        records.append(RoundRecord(t, context, action, reward, state, optimal,
                                   float(means[optimal]), float(means[action])))
        environment.advance(t)
    return records


def _write_snapshot(agent: Agent, label: str, run_index: int) -> None:
    if not settings.particle_snapshots or not isinstance(agent, UMTSParticleAgent):
        return
    path = Path(settings.snapshot_dir) / f"{label}_run{run_index}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    agent.particles.write_snapshot(path)
    logger.debug(f"Particle snapshot written to {path}")


def run_one(config: ExperimentConfig, agent_index: int, run_index: int,
            superuser_data: Optional[SuperuserData] = None) -> RunTrace:
    """Full trace of agent `agent_index` in replication `run_index`."""
    spec = config.agents[agent_index]
    if superuser_data is None:
        superuser_data = load_superuser_data(config)
    environment = build_environment(config.env, config.horizon, make_streams(config.seed, run_index), superuser_data)
    agent = build_agent(spec, environment.knowledge, agent_rng(config.seed, run_index, agent_index), environment)

    logger.debug(f"Run {run_index}: starting {spec.label}")
    records = play(environment, agent, config.horizon)
    _write_snapshot(agent, spec.label, run_index)
    extras = {"detections": list(agent.detections)} if isinstance(agent, ChangeDetectionAgent) else {}
    trace = RunTrace(tuple(records), config.seed, spec.label, environment.name, extras)
    logger.debug(f"Run {run_index}: {spec.label} finished with regret {cumulative_regret(trace)[-1]:.4f}")
    return trace


def metric_curve(trace: RunTrace, metric: MetricKind) -> np.ndarray:
    """Cumulative pseudo-regret, or the expected reward of the chosen arm per round."""
    if metric == MetricKind.CUMULATIVE_REGRET:
        return cumulative_regret(trace)
    return trace.chosen_means()


def _run_task(config: ExperimentConfig, agent_index: int, run_index: int,
              superuser_data: Optional[SuperuserData]) -> Tuple[int, int, np.ndarray]:
    trace = run_one(config, agent_index, run_index, superuser_data)
    return run_index, agent_index, metric_curve(trace, config.metric)


# =============================================================================
# AGGREGATION
# =============================================================================

@dataclass
class AggregateResult:
    """Per-run metric curves, shape (runs, agents, horizon)."""
    labels: Tuple[str, ...]
    curves: np.ndarray
    metric: MetricKind = MetricKind.CUMULATIVE_REGRET

    @property
    def num_runs(self) -> int:
        return self.curves.shape[0]

    @property
    def horizon(self) -> int:
        return self.curves.shape[2]

    def _stderr(self, values: np.ndarray) -> np.ndarray:
        if self.num_runs < 2:
            return np.zeros(values.shape[1:])
        return values.std(axis=0, ddof=1) / np.sqrt(self.num_runs)

    def mean(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    def stderr(self) -> np.ndarray:
        return self._stderr(self.curves)

    def final(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.mean()[:, -1], self.stderr()[:, -1]

    def window_summary(self, last: int) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and standard error across runs of the per-run average over the last `last` rounds."""
        if not 1 <= last <= self.horizon:
            raise ConfigurationError(f"window {last} for horizon {self.horizon}")
        per_run = self.curves[:, :, -last:].mean(axis=2)
        return per_run.mean(axis=0), self._stderr(per_run)

    def curves_frame(self) -> pd.DataFrame:
        mean, stderr = self.mean(), self.stderr()
        rounds = np.arange(1, self.horizon + 1)
        frames = [pd.DataFrame({"round": rounds, "agent": label, "mean": mean[i], "stderr": stderr[i]})
                  for i, label in enumerate(self.labels)]
        return pd.concat(frames, ignore_index=True)[CURVES_CSV_HEADER]

    def summary_frame(self, summary_window: Optional[int] = None) -> pd.DataFrame:
        final_mean, final_stderr = self.final()
        frame = pd.DataFrame({"agent": list(self.labels), "final_mean": final_mean,
                              "final_stderr": final_stderr})[SUMMARY_CSV_HEADER]
        if summary_window is not None:
            frame["window_mean"], frame["window_stderr"] = self.window_summary(summary_window)
        return frame


def run_experiment(config: ExperimentConfig, superuser_data: Optional[SuperuserData] = None) -> AggregateResult:
    """All (run, agent) replications in parallel, reduced in run order."""
    if superuser_data is None:
        superuser_data = load_superuser_data(config)
    tasks = [(run_index, agent_index) for run_index in range(config.num_runs)
             for agent_index in range(len(config.agents))]
    n_jobs = settings.worker_count(len(tasks))
    logger.info(f"Running {config.num_runs} run(s) x {len(config.agents)} agent(s), "
                f"horizon {config.horizon}, {n_jobs} worker(s)")

    outputs = Parallel(n_jobs=n_jobs)(
        delayed(_run_task)(config, agent_index, run_index, superuser_data) for run_index, agent_index in tasks)

    curves = np.zeros((config.num_runs, len(config.agents), config.horizon))
    for run_index, agent_index, curve in sorted(outputs, key=lambda item: (item[0], item[1])):
        curves[run_index, agent_index] = curve
    result = AggregateResult(tuple(agent.label for agent in config.agents), curves, config.metric)
    for label, value in zip(result.labels, result.final()[0]):
        logger.info(f"{label}: final mean {config.metric.value} {value:.4f}")
    return result


# =============================================================================
# RESULT FILES
# =============================================================================

def emit_results(result: AggregateResult, config: ExperimentConfig, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write `curves.csv`, `summary.csv` and `config_echo.json` into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"curves": out / "curves.csv", "summary": out / "summary.csv", "config": out / "config_echo.json"}
    result.curves_frame().to_csv(paths["curves"], index=False, float_format=FLOAT_FORMAT)
    result.summary_frame(config.summary_window).to_csv(paths["summary"], index=False, float_format=FLOAT_FORMAT)
    paths["config"].write_text(config.echo() + "\n", encoding="utf-8")
    logger.info(f"{SUCCESS_MESSAGES['RUN_COMPLETE']}: results in {out}")
    return paths


@dataclass
class CurveTable:
    """Parsed `curves.csv`: per-agent mean and standard error curves."""
    labels: Tuple[str, ...]
    mean: np.ndarray
    stderr: np.ndarray


def read_curves(path: Union[str, Path]) -> CurveTable:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(path=str(path), code="MISSING_FILE")
    frame = pd.read_csv(path, keep_default_na=False)
    if list(frame.columns) != CURVES_CSV_HEADER:
        raise DataFormatError(f"unexpected header {list(frame.columns)}", line_number=1, path=str(path))
    labels = tuple(dict.fromkeys(frame["agent"].astype(str)))
    mean = np.vstack([frame.loc[frame["agent"].astype(str) == label, "mean"].to_numpy(dtype=float)
                      for label in labels])
    stderr = np.vstack([frame.loc[frame["agent"].astype(str) == label, "stderr"].to_numpy(dtype=float)
                        for label in labels])
    return CurveTable(labels, mean, stderr)
