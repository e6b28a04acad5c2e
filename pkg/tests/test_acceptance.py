"""End-to-end reproductions of the headline experiments.

These replicate full experiment configs and take minutes; deselect with
`pytest -m "not slow"`.
"""

from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

from nslb.api.schemas import AgentSpec, ExperimentConfig, load_config
from nslb.config import settings
from nslb.core.types import BeliefVector, Context, DirichletCounts, MeanRewardModel, sample_categorical
from nslb.services.conjugate_service import DiscreteGridFamily
from nslb.services.environment_service import noisy_reward
from nslb.services.experiment_service import run_experiment, run_one
from nslb.services.inference_service import Observation, ParticleSet, exact_joint_posterior
from nslb.services.offline_service import als_complete, kmeans

pytestmark = pytest.mark.slow

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def all_workers(monkeypatch):
    monkeypatch.setattr(settings, "threads", None)


def _config(name, **changes) -> ExperimentConfig:
    data = load_config(CONFIG_DIR / name).model_dump(mode="json")
    data.update(changes)
    return ExperimentConfig(**data)


def _gap(mean, stderr, better, worse):
    """Difference of two agents' summaries in units of their pooled standard error."""
    pooled = np.sqrt(stderr[better] ** 2 + stderr[worse] ** 2)
    return (mean[better] - mean[worse]) / pooled


class TestExactVersusParticle:

    def _instance(self, seed):
        rng = np.random.default_rng(seed)
        models = [MeanRewardModel.tabular(rng.uniform(size=(2, 2))) for _ in range(2)]
        grid = DiscreteGridFamily(models, noise_std=0.5)
        alpha = DirichletCounts.diagonal(2, 8.0, 2.0)
        truth = models[int(rng.integers(0, 2))]
        phi = alpha.mean()
        state = int(rng.integers(0, 2))
        history = []
        for _ in range(10):
            action = int(rng.integers(0, 2))
            context = Context.empty(2)
            history.append(Observation(action, context, noisy_reward(truth.values[action, state], 0.5, rng)))
            state = sample_categorical(phi.row(state), rng)
        return grid, alpha, history, rng

    def test_state_marginals_agree(self):
        distances = []
        for seed in range(20):
            grid, alpha, history, rng = self._instance(seed)
            exact = exact_joint_posterior(history, grid, alpha, BeliefVector.uniform(2)).sum(axis=1)
            particles = ParticleSet(grid, alpha, 50_000, initial_belief=BeliefVector.uniform(2))
            for observation in history:
                particles.propose(rng)
                particles.observe(observation.action, observation.context, observation.reward, rng)
            distances.append(0.5 * np.abs(particles.state_marginal() - exact).sum())
        assert np.mean(distances) <= 0.05


class TestSyntheticExperiments:

    def test_fixed_changepoints_ordering(self):
        result = run_experiment(_config("fixed_changepoints.toml"))
        mean, stderr = result.final()
        labels = list(result.labels)
        mts = labels.index("mts")
        for baseline in ("cd_ucb", "cd_ts", "exp3s"):
            assert _gap(mean, stderr, labels.index(baseline), mts) >= 2.0, baseline

    def test_stochastic_known_ordering(self):
        config = _config("stochastic_known.toml")
        result = run_experiment(config)
        mean, stderr = result.window_summary(config.summary_window)
        labels = list(result.labels)
        for model_based in ("mts", "umts_pf"):
            for baseline in ("sw_mucb", "cd_ucb", "cd_ts", "exp3s"):
                gap = _gap(mean, stderr, labels.index(model_based), labels.index(baseline))
                assert gap >= 1.0, (model_based, baseline)

    def test_prior_sampled_uncertainty_helps(self):
        config = _config("prior_sampled.toml")
        config = config.model_copy(update={"agents": [a for a in config.agents if a.label in ("mts", "umts_pf")]})
        result = run_experiment(config)
        mean, stderr = result.window_summary(config.summary_window)
        labels = list(result.labels)
        assert _gap(mean, stderr, labels.index("umts_pf"), labels.index("mts")) >= 1.0

    def test_sliding_window_regret_is_sublinear(self):
        horizons = np.array([2000, 8000, 32000])
        finals = []
        for horizon in horizons:
            data = load_config(CONFIG_DIR / "sw_scaling.toml").model_dump(mode="json")
            data.update(horizon=int(horizon), num_runs=10)
            data["env"]["schedule"]["period"] = int(horizon) // 4
            finals.append(run_experiment(ExperimentConfig(**data)).final()[0][0])
        slope = np.polyfit(np.log(horizons), np.log(finals), 1)[0]
        assert slope <= 0.85


class TestRandomizedInvariants:

    def test_als_objective_monotone(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            dense = rng.uniform(1.0, 5.0, size=(6, 8))
            dense[rng.random(dense.shape) < 0.4] = 0.0
            model = als_complete(sparse.csr_matrix(dense), rank=2, reg=0.05, iterations=3, rng=rng)
            history = np.array(model.objective_history)
            assert np.all(np.diff(history) <= 1e-9 * np.maximum(history[:-1], 1.0))

    def test_kmeans_inertia_monotone(self):
        rng = np.random.default_rng(22)
        for _ in range(1000):
            rows = rng.normal(size=(int(rng.integers(5, 40)), 3))
            history = np.array(kmeans(rows, int(rng.integers(1, 5)), rng).inertia_history)
            assert np.all(np.diff(history) <= 1e-9 * np.maximum(history[:-1], 1.0))

    def test_replay_is_deterministic(self):
        base = _config("fixed_changepoints.toml", horizon=5, num_runs=1,
                       agents=[AgentSpec(name="mts"), AgentSpec(name="exp3s")])
        for seed in range(1000):
            config = base.model_copy(update={"seed": seed})
            first, second = run_one(config, seed % 2, 0), run_one(config, seed % 2, 0)
            np.testing.assert_array_equal(first.actions(), second.actions())
            np.testing.assert_array_equal(first.rewards(), second.rewards())


class TestMatrixCompletion:

    def test_rank_five_held_out_error(self):
        rng = np.random.default_rng(5)
        users, movies = rng.normal(size=(200, 5)), rng.normal(size=(300, 5))
        full = users @ movies.T / np.sqrt(5)
        observed = rng.random(full.shape) < 0.3
        train = sparse.csr_matrix((full[observed], np.nonzero(observed)), shape=full.shape)
        model = als_complete(train, rank=5, reg=0.1, iterations=50, rng=rng)
        held_out = ~observed
        predicted = model.user_factors @ model.movie_factors.T
        rmse = np.sqrt(np.mean((predicted[held_out] - full[held_out]) ** 2))
        assert rmse < 0.1
