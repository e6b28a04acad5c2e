# =============================================================================
# NSLB - EXPERIMENT ROUTER
# =============================================================================

"""
`run` command: load an experiment config, replicate it and write results.
"""

import argparse
import logging
from pathlib import Path

from ..api.schemas import load_config
from ..config import settings
from ..services.experiment_service import emit_results, run_experiment

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    """Add the `run` subcommand."""
    parser = subparsers.add_parser("run", help="Run an experiment config and write curves/summary CSVs")
    parser.add_argument("--config", required=True, help="TOML or JSON experiment config")
    parser.add_argument("--runs", type=int, default=None, help="Override the number of runs")
    parser.add_argument("--horizon", type=int, default=None, help="Override the horizon")
    parser.add_argument("--seed", type=int, default=None, help="Override the base seed")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.set_defaults(handler=run_command)
    return parser


def run_command(args: argparse.Namespace) -> int:
    """
    ## Run an experiment

    CLI overrides win over the file; the output directory falls back to the
    config's `output_dir` and then to `NSLB_OUTPUT_DIR`.
    """
    config = load_config(args.config).with_overrides(
        runs=args.runs, horizon=args.horizon, seed=args.seed, output_dir=args.out)
    out_dir = Path(config.output_dir or settings.output_dir)
    logger.info(f"Experiment {args.config}: env {config.env.kind}, agents "
                f"{', '.join(agent.label for agent in config.agents)}")
    result = run_experiment(config)
    paths = emit_results(result, config, out_dir)
    print(paths["curves"])
    return 0
