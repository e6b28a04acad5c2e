# =============================================================================
# NSLB - OFFLINE ROUTER
# =============================================================================

"""
`offline build` command: MovieLens ratings to superuser artifacts.
"""

import argparse
import logging

from ..api.schemas import OfflineBuildConfig
from ..services.offline_service import build_offline_artifacts

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    """Add `offline build`."""
    parser = subparsers.add_parser("offline", help="Offline pipeline for the superuser environment")
    commands = parser.add_subparsers(dest="offline_command", required=True)

    build = commands.add_parser("build", help="Filter, complete, cluster and write prior artifacts")
    build.add_argument("--ratings", required=True, help="ratings.dat (UserID::MovieID::Rating::Timestamp)")
    build.add_argument("--movies", required=True, help="movies.dat (MovieID::Title::Genres)")
    build.add_argument("--out", required=True, help="Artifact directory")
    build.add_argument("--seed", type=int, default=None)
    build.add_argument("--min-user", type=int, default=None, dest="min_user")
    build.add_argument("--min-movie", type=int, default=None, dest="min_movie")
    build.add_argument("--fixpoint", action="store_true", default=None,
                       help="Repeat the density filter until nothing changes")
    build.add_argument("--rank", type=int, default=None)
    build.add_argument("--reg", type=float, default=None)
    build.add_argument("--iterations", type=int, default=None)
    build.add_argument("--clusters", type=int, default=None)
    build.set_defaults(handler=build_command)
    return parser


def build_command(args: argparse.Namespace) -> int:
    overrides = {key: getattr(args, key) for key in
                 ("seed", "min_user", "min_movie", "fixpoint", "rank", "reg", "iterations", "clusters")
                 if getattr(args, key) is not None}
    config = OfflineBuildConfig(**overrides)
    artifacts = build_offline_artifacts(args.ratings, args.movies, args.out, config)
    logger.info(f"Superuser artifacts: {len(artifacts.user_ids)} users, {len(artifacts.movie_ids)} movies, "
                f"{config.clusters} states")
    print(args.out)
    return 0
