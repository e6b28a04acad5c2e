"""Shared fixtures: seeded generators, small environments, toy MovieLens files."""

from pathlib import Path

import numpy as np
import pytest

from nslb.api.schemas import (
    AgentSpec,
    ExperimentConfig,
    FixedPeriodSchedule,
    StochasticSchedule,
    SuperuserEnvConfig,
    SyntheticEnvConfig,
)
from nslb.config import settings
from nslb.core.types import DirichletCounts
from nslb.services.environment_service import (
    MovieCatalog,
    SuperuserData,
    build_superuser_transition,
)
from nslb.services.experiment_service import make_streams


@pytest.fixture(autouse=True)
def single_worker(monkeypatch, tmp_path):
    """Run replications in-process and keep log files out of the repository."""
    monkeypatch.setattr(settings, "threads", 1)
    monkeypatch.setattr(settings, "log_file", str(tmp_path / "logs" / "nslb.log"))
    monkeypatch.setattr(settings, "snapshot_dir", str(tmp_path / "particles"))
    monkeypatch.setattr(settings, "particle_snapshots", False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def streams():
    return make_streams(0, 0)


def synthetic_config(**overrides) -> SyntheticEnvConfig:
    values = {"num_arms": 3, "num_states": 2, "sigma": 0.5}
    values.update(overrides)
    return SyntheticEnvConfig(**values)


def experiment_config(env=None, agents=("mts",), **overrides) -> ExperimentConfig:
    values = {
        "env": env if env is not None else synthetic_config(schedule=FixedPeriodSchedule(period=10)),
        "agents": [AgentSpec(name=name) if isinstance(name, str) else name for name in agents],
        "horizon": 30,
        "num_runs": 2,
        "seed": 7,
    }
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture
def stochastic_config():
    return synthetic_config(schedule=StochasticSchedule(change_prob=0.05))


@pytest.fixture
def superuser_data():
    """Six genres of four movies each, 3-dimensional factors, two user clusters."""
    gen = np.random.default_rng(99)
    num_movies, dim = 24, 3
    genres = tuple((f"g{movie % 6}",) for movie in range(num_movies))
    train_movies = gen.normal(size=(num_movies, dim))
    test_movies = train_movies + 0.1 * gen.normal(size=(num_movies, dim))
    test_users = gen.normal(size=(10, dim))
    clusters = np.arange(10) % 2
    means = np.vstack([test_users[clusters == c].mean(axis=0) for c in range(2)])
    covs = np.stack([0.5 * np.eye(dim)] * 2)
    transition = build_superuser_transition(means, 0.01)
    return SuperuserData(
        catalog=MovieCatalog(train_movies, genres, tuple(range(num_movies))),
        train_movie_factors=train_movies,
        test_movie_factors=test_movies,
        test_user_factors=test_users,
        test_clusters=clusters,
        prior_means=means,
        prior_covs=covs,
        prior_transition=transition,
        prior_alpha=DirichletCounts.from_transition(transition, 800.0),
    )


@pytest.fixture
def superuser_config():
    return SuperuserEnvConfig(artifacts_dir="unused", arms_per_round=4, change_prob=0.01)


def write_movielens(directory: Path, num_users: int = 30, num_movies: int = 40, density: float = 0.6,
                    seed: int = 3) -> tuple:
    """Toy `ratings.dat` / `movies.dat` pair in the MovieLens `::` format."""
    gen = np.random.default_rng(seed)
    users = gen.normal(size=(num_users, 2))
    movies = gen.normal(size=(num_movies, 2))
    lines = []
    for u in range(num_users):
        for m in range(num_movies):
            if gen.random() < density:
                rating = int(np.clip(np.round(3 + users[u] @ movies[m]), 1, 5))
                lines.append(f"{u + 1}::{m + 101}::{rating}::{978300000 + len(lines)}")
    ratings_path = directory / "ratings.dat"
    ratings_path.write_text("\n".join(lines) + "\n", encoding="latin-1")
    genre_names = ["Action", "Comedy", "Drama", "Horror", "Romance", "Thriller", "Western", "Musical"]
    movie_lines = [f"{m + 101}::Movie {m} (1999)::{genre_names[m % 8]}|{genre_names[(m + 3) % 8]}"
                   for m in range(num_movies)]
    movies_path = directory / "movies.dat"
    movies_path.write_text("\n".join(movie_lines) + "\n", encoding="latin-1")
    return ratings_path, movies_path


@pytest.fixture
def movielens_files(tmp_path):
    return write_movielens(tmp_path)
