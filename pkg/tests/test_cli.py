"""Command line surface."""

import pandas as pd
import pytest

from main import build_parser, main

RUN_CONFIG = """
horizon = 20
num_runs = 2
seed = 1

[env]
kind = "synthetic"
num_arms = 3
num_states = 2

[env.schedule]
kind = "fixed_period"
period = 5

[[agents]]
name = "mts"

[[agents]]
name = "ucb1"
label = "UCB1"
"""

SUPERUSER_CONFIG = """
horizon = 15
num_runs = 1

[env]
kind = "superuser"
artifacts_dir = "{artifacts}"
arms_per_round = 3

[[agents]]
name = "mts"

[[agents]]
name = "linucb"
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(RUN_CONFIG)
    return path


class TestRunCommand:

    def test_run_writes_results(self, run_config, tmp_path, capsys):
        out = tmp_path / "results"
        assert main(["run", "--config", str(run_config), "--out", str(out)]) == 0
        curves = pd.read_csv(out / "curves.csv")
        assert len(curves) == 40
        assert sorted(curves["agent"].unique()) == ["UCB1", "mts"]
        assert (out / "summary.csv").is_file()
        assert (out / "config_echo.json").is_file()
        assert str(out / "curves.csv") in capsys.readouterr().out

    def test_overrides(self, run_config, tmp_path):
        out = tmp_path / "results"
        assert main(["run", "--config", str(run_config), "--out", str(out), "--runs", "1", "--horizon", "7"]) == 0
        assert len(pd.read_csv(out / "curves.csv")) == 14

    def test_echo_reruns(self, run_config, tmp_path):
        first = tmp_path / "first"
        second = tmp_path / "second"
        assert main(["run", "--config", str(run_config), "--out", str(first)]) == 0
        assert main(["run", "--config", str(first / "config_echo.json"), "--out", str(second)]) == 0
        assert (first / "curves.csv").read_bytes() == (second / "curves.csv").read_bytes()

    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "absent.toml")]) == 2
        assert "error" in capsys.readouterr().err

    def test_invalid_agent(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(RUN_CONFIG.replace('name = "ucb1"', 'name = "greedy"'))
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2

    def test_mismatched_agent(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(RUN_CONFIG.replace('name = "ucb1"', 'name = "linucb"'))
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2

    def test_config_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run"])


class TestOfflineCommand:

    def test_build_then_run_superuser(self, movielens_files, tmp_path):
        ratings_path, movies_path = movielens_files
        artifacts = tmp_path / "artifacts"
        code = main(["offline", "build", "--ratings", str(ratings_path), "--movies", str(movies_path),
                     "--out", str(artifacts), "--min-user", "1", "--min-movie", "1", "--rank", "3",
                     "--iterations", "3", "--clusters", "2"])
        assert code == 0
        assert (artifacts / "prior.json").is_file()

        config = tmp_path / "superuser.toml"
        config.write_text(SUPERUSER_CONFIG.format(artifacts=artifacts.as_posix()))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "results")]) == 0
        assert len(pd.read_csv(tmp_path / "results" / "curves.csv")) == 30

    def test_missing_ratings(self, tmp_path):
        code = main(["offline", "build", "--ratings", str(tmp_path / "absent.dat"),
                     "--movies", str(tmp_path / "movies.dat"), "--out", str(tmp_path / "a")])
        assert code == 2

    def test_movies_is_required(self, tmp_path):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["offline", "build", "--ratings", "ratings.dat", "--out", str(tmp_path)])
