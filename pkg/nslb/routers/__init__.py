# =============================================================================
# NSLB - ROUTERS MODULE
# =============================================================================

"""
Command handlers for the `nslb` command line.
Each module registers one subcommand on the top-level parser.
"""

from . import experiment, offline

__all__ = [
    "experiment",
    "offline"
]
