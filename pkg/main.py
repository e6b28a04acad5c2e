# =============================================================================
# NSLB - MAIN ENTRY POINT
# =============================================================================

"""
Command line entry point.

    python main.py run --config configs/fixed_changepoints.toml [--runs N] [--horizon N] [--seed S] [--out DIR]
    python main.py offline build --ratings ratings.dat --movies movies.dat --out artifacts/

Exit codes: 0 on success, 2 for configuration/data errors, 1 for anything else.
"""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from nslb.config import settings
from nslb.core.exceptions import NSLBError
from nslb.core.logging import setup_logging
from nslb.routers import experiment, offline

logger = logging.getLogger("nslb")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nslb", description=f"{settings.app_name} v{settings.app_version}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    experiment.register(subparsers)
    offline.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging()
    try:
        return args.handler(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return 2
    except NSLBError as e:
        logger.error(e.detail)
        print(f"error: {e.detail}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
